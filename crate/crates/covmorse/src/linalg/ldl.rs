//! Unpivoted skyline LDLᴴ factorization of a shifted Hermitian matrix.
//!
//! Without pivoting the factorization of an indefinite matrix can break down
//! on a tiny pivot; callers treat that as "shift too close to the spectrum"
//! and retry with a perturbed shift. When it succeeds, Sylvester's law makes
//! the sign count of D equal to the inertia of A − σI.

use super::sparse::{CsrMatrix, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Inertia {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Breakdown {
    pub row: usize,
    pub pivot: f64,
}

pub struct SkylineLdl {
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    l: Vec<C64>,
    d: Vec<f64>,
}

/// Profile structure of `a` under `perm` (perm[new] = old).
pub struct Skyline {
    perm: Vec<usize>,
    inv: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
}

impl Skyline {
    pub fn new(a: &CsrMatrix, perm: Vec<usize>) -> Self {
        let n = a.nrows();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j, _) in a.triplets() {
            let (ni, nj) = (inv[i], inv[j]);
            if nj < ni {
                first[ni] = first[ni].min(nj);
            } else if ni < nj {
                first[nj] = first[nj].min(ni);
            }
        }
        let mut offset = vec![0; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i]);
        }
        Skyline {
            perm,
            inv,
            first,
            offset,
        }
    }

    pub fn profile(&self) -> usize {
        *self.offset.last().unwrap_or(&0)
    }

    /// Factor A − σI. `tiny` is the absolute pivot magnitude treated as zero.
    pub fn factor(&self, a: &CsrMatrix, sigma: f64, tiny: f64) -> Result<SkylineLdl, Breakdown> {
        let n = a.nrows();
        let mut l = vec![C64::new(0.0, 0.0); self.profile()];
        let mut d = vec![0.0; n];
        let mut diag0 = vec![0.0; n];
        for new_i in 0..n {
            let old_i = self.perm[new_i];
            let (cols, vals) = a.row(old_i);
            for (&oj, &v) in cols.iter().zip(vals) {
                let nj = self.inv[oj];
                if nj < new_i {
                    l[self.offset[new_i] + nj - self.first[new_i]] = v;
                } else if nj == new_i {
                    diag0[new_i] = v.re;
                }
            }
        }
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let len = i - fi;
            let (done, rest) = l.split_at_mut(oi);
            let row = &mut rest[..len];
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                if k0 < j {
                    let lj = &done[self.offset[j] + k0 - fj..self.offset[j] + j - fj];
                    let gi = &row[k0 - fi..j - fi];
                    let mut s = C64::new(0.0, 0.0);
                    for (g, lv) in gi.iter().zip(lj) {
                        s += g * lv.conj();
                    }
                    row[j - fi] -= s;
                }
            }
            let mut di = diag0[i] - sigma;
            for (idx, j) in (fi..i).enumerate() {
                let g = row[idx];
                let lij = g / d[j];
                di -= (g * lij.conj()).re;
                row[idx] = lij;
            }
            if !(di.abs() > tiny) {
                return Err(Breakdown { row: i, pivot: di });
            }
            d[i] = di;
        }
        Ok(SkylineLdl {
            perm: self.perm.clone(),
            first: self.first.clone(),
            offset: self.offset.clone(),
            l,
            d,
        })
    }
}

impl SkylineLdl {
    pub fn inertia(&self) -> Inertia {
        let mut out = Inertia {
            negative: 0,
            zero: 0,
            positive: 0,
        };
        for &x in &self.d {
            if x < 0.0 {
                out.negative += 1;
            } else if x > 0.0 {
                out.positive += 1;
            } else {
                out.zero += 1;
            }
        }
        out
    }

    pub fn pivots(&self) -> &[f64] {
        &self.d
    }

    /// Solves (A − σI) x = b in place.
    pub fn solve(&self, b: &mut [C64]) {
        let n = self.d.len();
        let mut z: Vec<C64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.l[self.offset[i]..self.offset[i + 1]];
            let mut s = z[i];
            for (k, lv) in row.iter().enumerate() {
                s -= lv * z[fi + k];
            }
            z[i] = s;
        }
        for (zi, &di) in z.iter_mut().zip(&self.d) {
            *zi /= di;
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let xi = z[i];
            let row = &self.l[self.offset[i]..self.offset[i + 1]];
            for (k, lv) in row.iter().enumerate() {
                z[fi + k] -= lv.conj() * xi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = z[new];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ordering::reverse_cuthill_mckee;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian_banded(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, C64::new(rng.gen_range(-2.0..2.0), 0.0)));
            for _ in 0..2 {
                let j = rng.gen_range(0..n);
                if j != i {
                    let v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    t.push((i, j, v));
                    t.push((j, i, v.conj()));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn inertia_matches_dense_eigenvalues() {
        for seed in 0..20 {
            let a = random_hermitian_banded(40, seed);
            let sky = Skyline::new(&a, reverse_cuthill_mckee(&a));
            let ev = a.to_dense().symmetric_eigenvalues();
            for sigma in [-1.3, 0.1, 0.77, 2.5] {
                if ev.iter().any(|&e| (e - sigma).abs() < 1e-6) {
                    continue;
                }
                let f = sky.factor(&a, sigma, 1e-14).unwrap();
                let neg = ev.iter().filter(|&&e| e < sigma).count();
                assert_eq!(f.inertia().negative, neg, "seed {seed} sigma {sigma}");
            }
        }
    }

    #[test]
    fn solve_inverts() {
        let a = random_hermitian_banded(30, 99);
        let sky = Skyline::new(&a, reverse_cuthill_mckee(&a));
        let f = sky.factor(&a, 0.3137, 1e-14).unwrap();
        let b: Vec<C64> = (0..30).map(|i| C64::new(i as f64, 1.0)).collect();
        let mut x = b.clone();
        f.solve(&mut x);
        let ad = a.to_dense() - DMatrix::<C64>::identity(30, 30) * C64::new(0.3137, 0.0);
        let r = ad * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(b);
        assert!(r.norm() < 1e-9);
    }

    #[test]
    fn exact_zero_pivot_is_reported() {
        let a = CsrMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let sky = Skyline::new(&a, vec![0, 1, 2]);
        assert!(sky.factor(&a, 2.0, 1e-14).is_err());
    }
}
