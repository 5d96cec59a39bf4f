use covmorse::geomodel::{
    build_torus_model, constant_curvature_field, link_phases_from_curvature, magnetic_translation, BundleLinkData,
    CoverGroup, CoverSpec, CurvatureSpec, GroupGenerator, ModelManifold, Modulation,
};
use covmorse::lattice_op::{
    assemble_dolbeault, assemble_schrodinger, dbar_matrix, dolbeault_matrix, ims_defect_bound, ims_partition,
    localization_error, read_triplets, write_triplets, BoundaryCondition,
};
use covmorse::linalg::eigs::dense_eigenvalues;
use covmorse::linalg::{CsrMatrix, C64};
use covmorse::spectral_count::count_below;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn torus(n: usize, res: usize, cover: CoverSpec) -> ModelManifold {
    build_torus_model(n, DMatrix::identity(2 * n, 2 * n), res, cover).unwrap()
}

fn links_for(model: &ModelManifold, alpha_over_2pi: &[f64], k: u32) -> BundleLinkData {
    let a: Vec<f64> = alpha_over_2pi.iter().map(|x| 2.0 * PI * x).collect();
    let f = constant_curvature_field(model, &a, 1);
    link_phases_from_curvature(model, &f, k).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect()
}

fn max_diff(a: &CsrMatrix, b: &CsrMatrix) -> f64 {
    a.add_scaled(1.0, b, -1.0).max_abs()
}

#[test]
fn dbar_squares_to_zero() {
    for (n, res, flux) in [(2, 4, vec![1.0, -2.0]), (3, 4, vec![1.0, 1.0, -1.0])] {
        let m = torus(n, res, CoverSpec::Trivial);
        let links = links_for(&m, &flux, 1);
        for q in 0..n - 1 {
            let d0 = dbar_matrix(&m, &links, q).unwrap();
            let d1 = dbar_matrix(&m, &links, q + 1).unwrap();
            let sq = d1.matmul(&d0);
            let scale = d0.max_abs() * d1.max_abs();
            assert!(sq.max_abs() <= 1e-12 * scale, "n={n} q={q}: {}", sq.max_abs());
        }
    }
}

#[test]
fn gauge_covariance() {
    let m = torus(1, 8, CoverSpec::Trivial);
    let links = links_for(&m, &[2.0], 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g: Vec<C64> = (0..m.n_sites()).map(|_| C64::from_polar(1.0, rng.gen::<f64>() * 2.0 * PI)).collect();
    let moved = links.gauge_transform(&m, &g);
    for q in 0..2 {
        let h = dolbeault_matrix(&m, &links, q, 0.5).unwrap();
        let h2 = dolbeault_matrix(&m, &moved, q, 0.5).unwrap();
        // H' = G H Gᴴ with G = diag(conj g)
        let c = h.nrows() / m.n_sites();
        let gd: Vec<C64> = (0..h.nrows()).map(|i| g[i / c].conj()).collect();
        let t: Vec<_> = h.triplets().map(|(i, j, v)| (i, j, gd[i] * v * gd[j].conj())).collect();
        let conj = CsrMatrix::from_triplets(h.nrows(), h.ncols(), t);
        assert!(max_diff(&conj, &h2) < 1e-12);
    }
}

#[test]
fn magnetic_translations_commute() {
    let m = build_torus_model(
        1,
        DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
        8,
        CoverSpec::Finite(vec![GroupGenerator::Shift(vec![4, 0])]),
    )
    .unwrap();
    let links = links_for(&m, &[1.0], 3);
    let CoverGroup::Finite { elements } = &m.cover else { panic!() };
    let h = dolbeault_matrix(&m, &links, 0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = random_vec(&mut rng, h.nrows());
    for g in elements {
        let phase = magnetic_translation(&m, &links, g).unwrap();
        let tu = covmorse::geomodel::apply_translation(g, &phase, 1, &u);
        let lhs = h.mul_vec(&tu);
        let rhs = covmorse::geomodel::apply_translation(g, &phase, 1, &h.mul_vec(&u));
        let err = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "translation defect {err}");
    }
}

#[test]
fn schrodinger_quadratic_form() {
    let m = torus(1, 6, CoverSpec::Trivial);
    let links = links_for(&m, &[1.0], 2);
    let r = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pot: Vec<DMatrix<C64>> = (0..m.n_sites())
        .map(|_| {
            let a = rng.gen::<f64>();
            let b = C64::new(rng.gen::<f64>(), rng.gen::<f64>());
            DMatrix::from_row_slice(2, 2, &[C64::new(a, 0.0), b, b.conj(), C64::new(-a, 0.0)])
        })
        .collect();
    let k = 2;
    let h = assemble_schrodinger(&m, &links, &pot, k).unwrap();
    let u = random_vec(&mut rng, m.n_sites() * r);
    let hu = h.matrix.mul_vec(&u);
    let form: C64 = u.iter().zip(&hu).map(|(a, b)| a.conj() * b).sum();
    // direct evaluation of (1/k)Σ|D_a u|² − ⟨u, V u⟩ from the links
    let hm = m.mesh().unwrap();
    let mut kinetic = 0.0;
    for s in 0..m.n_sites() {
        for a in 0..2 {
            let t = m.step(s, a, true);
            for i in 0..r {
                let d = (links.link(s, a).conj() * u[t * r + i] - u[s * r + i]) / hm[a];
                kinetic += d.norm_sqr();
            }
        }
    }
    let mut pot_e = 0.0;
    for s in 0..m.n_sites() {
        for i in 0..r {
            for j in 0..r {
                pot_e += (u[s * r + i].conj() * pot[s][(i, j)] * u[s * r + j]).re;
            }
        }
    }
    let expect = kinetic / k as f64 - pot_e;
    assert!((form.re - expect).abs() < 1e-9 * expect.abs().max(1.0));
    assert!(form.im.abs() < 1e-9 * expect.abs().max(1.0));
}

#[test]
fn dirichlet_domain_monotonicity() {
    let m = torus(1, 8, CoverSpec::FreeAbelian(2));
    let links = links_for(&m, &[1.0], 2);
    let small = assemble_dolbeault(&m, &links, 0, &BoundaryCondition::DirichletUs(0.2), 1).unwrap();
    let big = assemble_dolbeault(&m, &links, 0, &BoundaryCondition::DirichletUs(0.5), 1).unwrap();
    let u = assemble_dolbeault(&m, &links, 0, &BoundaryCondition::DirichletU, 1).unwrap();
    assert!(u.matrix.nrows() < small.matrix.nrows() && small.matrix.nrows() < big.matrix.nrows());
    for lambda in [1.0, 5.0, 12.0, 30.0] {
        let a = count_below(&u, lambda).unwrap().count;
        let b = count_below(&small, lambda).unwrap().count;
        let c = count_below(&big, lambda).unwrap().count;
        assert!(a <= b && b <= c, "λ={lambda}: {a} {b} {c}");
    }
}

#[test]
fn ims_identity_on_flat_laplacian() {
    // Σ_γ |J_γ(x) − J_γ(y)|²-weighted couplings reproduce the discrete
    // gradient energy of the cutoffs
    let m = build_torus_model(
        1,
        DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
        16,
        CoverSpec::Finite(vec![GroupGenerator::Shift(vec![8, 0])]),
    )
    .unwrap();
    let links = links_for(&m, &[0.0], 1);
    let pot = vec![DMatrix::zeros(1, 1); m.n_sites()];
    let h = assemble_schrodinger(&m, &links, &pot, 1).unwrap();
    let p = ims_partition(&m, 0.4).unwrap();
    assert!(p.partition_defect() < 1e-12);
    let s = localization_error(&h, &p).unwrap();
    let hm = m.mesh().unwrap();
    for x in 0..m.n_sites() {
        let (_, vals) = s.row(x);
        let row_sum: C64 = vals.iter().sum();
        let mut grad = 0.0;
        for a in 0..2 {
            for fwd in [true, false] {
                let y = m.step(x, a, fwd);
                grad += p.cutoffs.iter().map(|j| (j[x] - j[y]).powi(2)).sum::<f64>() / (hm[a] * hm[a]);
            }
        }
        assert!((row_sum.re + 0.5 * grad).abs() < 1e-10, "site {x}");
    }
    let d = ims_defect_bound(&h, &p, 1).unwrap();
    assert!(d.identity_residual < 1e-12);
    assert!(d.c >= 0.0);
}

#[test]
fn site_dependent_field_runs_through_assembly() {
    let m = torus(1, 12, CoverSpec::Trivial);
    let spec = CurvatureSpec {
        alpha: vec![2.0 * PI],
        modulation: vec![Modulation {
            plane: 0,
            amplitude: 3.0,
            wave: [1, 0],
        }],
    };
    let f = spec.sample(&m, 1).unwrap();
    let links = link_phases_from_curvature(&m, &f, 2).unwrap();
    assert!((links.total_flux(&m, 0) / (2.0 * PI) - 2.0).abs() < 1e-9);
    let op = assemble_dolbeault(&m, &links, 0, &BoundaryCondition::Periodic, 1).unwrap();
    assert!(op.matrix.hermitian_defect() < 1e-12);
}

#[test]
fn triplets_of_assembled_operator_round_trip() {
    let m = torus(1, 6, CoverSpec::Trivial);
    let links = links_for(&m, &[1.0], 1);
    let op = assemble_dolbeault(&m, &links, 1, &BoundaryCondition::Periodic, 1).unwrap();
    let mut buf = Vec::new();
    write_triplets(&op, &mut buf).unwrap();
    let back = read_triplets(std::io::BufReader::new(&buf[..])).unwrap();
    assert_eq!(back.nrows(), op.matrix.nrows());
    assert!(max_diff(&back, &op.matrix) == 0.0);
    let a = dense_eigenvalues(&back.to_dense());
    let b = dense_eigenvalues(&op.matrix.to_dense());
    assert_eq!(a, b);
}
