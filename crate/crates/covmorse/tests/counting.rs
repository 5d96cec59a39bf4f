use covmorse::linalg::eigs::dense_eigenvalues;
use covmorse::linalg::{CsrMatrix, C64};
use covmorse::pointspec::{nu_b, nu_b_bar, NuBParams};
use covmorse::spectral_count::count_below_matrix;
use proptest::prelude::*;

/// Banded Hermitian matrix from a flat list of entries.
fn banded(n: usize, band: usize, vals: &[(f64, f64)]) -> CsrMatrix {
    let mut t = Vec::new();
    let mut it = vals.iter().cycle();
    for i in 0..n {
        let (d, _) = it.next().unwrap();
        t.push((i, i, C64::new(4.0 * d, 0.0)));
        for off in 1..=band {
            if i + off < n {
                let &(re, im) = it.next().unwrap();
                let v = C64::new(re, im);
                t.push((i, i + off, v));
                t.push((i + off, i, v.conj()));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inertia_agrees_with_dense(
        n in 1usize..40,
        band in 1usize..4,
        vals in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8..64),
        lambda in -6.0f64..6.0,
    ) {
        let h = banded(n, band, &vals);
        let ev = dense_eigenvalues(&h.to_dense());
        let r = count_below_matrix(&h, lambda).unwrap();
        if r.certified {
            prop_assert_eq!(r.count, ev.iter().filter(|&&e| e <= lambda).count());
        }
    }

    #[test]
    fn count_is_monotone(
        n in 1usize..30,
        vals in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8..32),
        a in -6.0f64..6.0,
        b in -6.0f64..6.0,
    ) {
        let h = banded(n, 2, &vals);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(count_below_matrix(&h, lo).unwrap().count <= count_below_matrix(&h, hi).unwrap().count);
    }

    #[test]
    fn landau_density_is_monotone_and_right_continuous(
        half in 1usize..4,
        mags in prop::collection::vec(0.3f64..4.0, 0..4),
        a in 0.0f64..30.0,
        b in 0.0f64..30.0,
    ) {
        let s = mags.len().min(half);
        let mags = mags[..s].to_vec();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let p = NuBParams::for_lambda(2 * half, mags, hi).unwrap();
        let v_lo = nu_b(lo, &p).unwrap();
        let v_hi = nu_b(hi, &p).unwrap();
        prop_assert!(v_lo <= v_hi * (1.0 + 1e-12) + 1e-15);
        prop_assert!(nu_b_bar(lo, &p).unwrap() >= v_lo);
    }
}
