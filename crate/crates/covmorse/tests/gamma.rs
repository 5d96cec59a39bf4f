use covmorse::gamma_dim::{
    dirichlet_certificate, dirichlet_lower_bound_check, euler_inequalities, gamma_counting, gamma_dim,
    random_equivariant_complex, rank_perturbation_check, spectral_projector, variational_lower_bound,
    FiniteGammaComplex, GammaModuleRep, GammaSystem, HoppingFamily, ThetaGrid,
};
use covmorse::geomodel::{
    build_torus_model, build_torus_model_with, constant_curvature_field, link_phases_from_curvature, CoverSpec,
    GroupGenerator, ModelManifold,
};
use covmorse::lattice_op::AssemblyOptions;
use covmorse::linalg::eigs::{dense_eigenvalues, dense_eigh};
use covmorse::linalg::C64;
use covmorse::spectral_count::count_below;
use covmorse::Error;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn half_shift(res: (usize, usize)) -> ModelManifold {
    build_torus_model_with(
        1,
        DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
        vec![res.0, res.1],
        CoverSpec::Finite(vec![GroupGenerator::Shift(vec![res.0 as i64 / 2, 0])]),
    )
    .unwrap()
}

fn dolbeault_system(model: &ModelManifold, alpha_over_2pi: f64, k: u32, q: usize, grid: ThetaGrid) -> GammaSystem {
    let f = constant_curvature_field(model, &[2.0 * PI * alpha_over_2pi], 1);
    let links = link_phases_from_curvature(model, &f, k).unwrap();
    GammaSystem::dolbeault(model, &links, q, 1, &AssemblyOptions::default(), grid).unwrap()
}

#[test]
fn finite_cover_count_is_cover_count_over_order() {
    let m = half_shift((16, 8));
    let sys = dolbeault_system(&m, 1.0, 2, 0, ThetaGrid::default());
    let GammaSystem::Finite { op, .. } = &sys else { panic!() };
    let ev = dense_eigenvalues(&op.matrix.to_dense());
    for lambda in [0.5, 3.0, 9.0, 40.0] {
        let g = gamma_counting(&sys, lambda).unwrap();
        let oracle = ev.iter().filter(|&&e| e <= lambda).count() as f64 / 2.0;
        assert_eq!(g.value, oracle);
        let t = g.projector_trace.expect("small cover uses the projector path");
        assert!((t - oracle).abs() < 1e-8);
    }
}

#[test]
fn trivial_group_matches_plain_count() {
    let m = build_torus_model(1, DMatrix::identity(2, 2), 10, CoverSpec::Trivial).unwrap();
    let sys = dolbeault_system(&m, 1.0, 1, 0, ThetaGrid::default());
    let GammaSystem::Finite { op, .. } = &sys else { panic!() };
    for lambda in [0.1, 2.0, 7.5] {
        assert_eq!(gamma_counting(&sys, lambda).unwrap().value, count_below(op, lambda).unwrap().count as f64);
    }
}

#[test]
fn projector_dimension_is_dimension_over_order() {
    let m = half_shift((16, 8));
    let sys = dolbeault_system(&m, 1.0, 1, 0, ThetaGrid::default());
    let GammaSystem::Finite { op, fundamental, .. } = &sys else { panic!() };
    let p = spectral_projector(&op.matrix.to_dense(), 6.0);
    let rank = p.trace().re.round();
    let module = GammaModuleRep::FiniteGroup {
        projection: p,
        action: sys.action_matrices(),
        fundamental: fundamental.clone(),
    };
    assert!((gamma_dim(&module).unwrap() - rank / 2.0).abs() < 1e-10);
}

#[test]
fn gamma_dim_is_additive() {
    let n = 4;
    let (_, vecs) = dense_eigh(&DMatrix::from_fn(n, n, |i, j| C64::new((i * j) as f64 + (i + j) as f64, 0.0)));
    let col = |c: usize| DMatrix::from_fn(n, 1, |i, _| vecs[(i, c)]);
    let p1 = col(0) * col(0).adjoint();
    let p2 = col(1) * col(1).adjoint() + col(2) * col(2).adjoint();
    let grid = ThetaGrid::uniform(4).points(1);
    let fam = |p: &DMatrix<C64>| GammaModuleRep::BlochFamily {
        thetas: grid.iter().map(|g| g.0.clone()).collect(),
        weights: grid.iter().map(|g| g.1).collect(),
        projections: vec![p.clone(); grid.len()],
    };
    let a = gamma_dim(&fam(&p1)).unwrap();
    let b = gamma_dim(&fam(&p2)).unwrap();
    let ab = gamma_dim(&fam(&(&p1 + &p2))).unwrap();
    assert!((a + b - ab).abs() < 1e-12);
    assert!((gamma_dim(&fam(&DMatrix::identity(n, n))).unwrap() - n as f64).abs() < 1e-12);
}

#[test]
fn chain_dirichlet_bounds() {
    let sys = GammaSystem::bloch(Box::new(HoppingFamily::chain_laplacian(1)), ThetaGrid::uniform(64)).unwrap();
    let r = dirichlet_lower_bound_check(&sys, 1.0).unwrap();
    assert!(r.n_gamma > 0.0 && r.n_dirichlet == 0 && r.holds);
    let r = dirichlet_lower_bound_check(&sys, -1.0).unwrap();
    assert!(r.n_gamma == 0.0 && r.n_dirichlet == 0 && r.holds);

    let sys4 = GammaSystem::bloch(Box::new(HoppingFamily::chain_laplacian(4)), ThetaGrid::uniform(64)).unwrap();
    for lambda in [0.5, 1.5, 2.5, 3.5, 10.0] {
        let r = dirichlet_lower_bound_check(&sys4, lambda).unwrap();
        assert!(r.holds, "λ={lambda}: {r:?}");
    }
    let top = dirichlet_lower_bound_check(&sys4, 10.0).unwrap();
    assert_eq!(top.n_gamma, 4.0);
}

#[test]
fn certificates_reproduce_dirichlet_counts() {
    let sys4 = GammaSystem::bloch(Box::new(HoppingFamily::chain_laplacian(4)), ThetaGrid::uniform(16)).unwrap();
    for lambda in [0.5, 1.5, 3.5] {
        let cert = dirichlet_certificate(&sys4, lambda).unwrap();
        let lb = variational_lower_bound(&sys4, &cert, lambda).unwrap();
        let n0 = count_below(sys4.dirichlet_u(), lambda).unwrap().count as f64;
        assert!((lb - n0).abs() < 1e-10);
        assert!(gamma_counting(&sys4, lambda).unwrap().value + 1e-12 >= lb);
    }

    let m = half_shift((16, 8));
    let sys = dolbeault_system(&m, 1.0, 2, 0, ThetaGrid::default());
    for lambda in [3.0, 12.0] {
        let cert = dirichlet_certificate(&sys, lambda).unwrap();
        let lb = variational_lower_bound(&sys, &cert, lambda).unwrap();
        let n0 = count_below(sys.dirichlet_u(), lambda).unwrap().count as f64;
        assert!((lb - n0).abs() < 1e-8, "λ={lambda}: {lb} vs {n0}");
        assert!(gamma_counting(&sys, lambda).unwrap().value + 1e-9 >= lb);
    }
}

#[test]
fn constants_certify_the_flat_kernel() {
    let m = build_torus_model(1, DMatrix::identity(2, 2), 6, CoverSpec::Trivial).unwrap();
    let sys = dolbeault_system(&m, 0.0, 1, 0, ThetaGrid::default());
    let n = m.n_sites();
    let one = DMatrix::from_element(n, 1, C64::new(1.0 / (n as f64).sqrt(), 0.0));
    let cand = GammaModuleRep::FiniteGroup {
        projection: &one * one.adjoint(),
        action: sys.action_matrices(),
        fundamental: (0..n).collect(),
    };
    assert!((variational_lower_bound(&sys, &cand, 0.0).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn form_bound_violation_has_a_witness() {
    let m = build_torus_model(1, DMatrix::identity(2, 2), 6, CoverSpec::Trivial).unwrap();
    let sys = dolbeault_system(&m, 0.0, 1, 0, ThetaGrid::default());
    let GammaSystem::Finite { op, .. } = &sys else { panic!() };
    let (_, vecs) = dense_eigh(&op.matrix.to_dense());
    let n = vecs.nrows();
    let top = DMatrix::from_fn(n, 1, |i, _| vecs[(i, n - 1)]);
    let cand = GammaModuleRep::FiniteGroup {
        projection: &top * top.adjoint(),
        action: sys.action_matrices(),
        fundamental: (0..n).collect(),
    };
    match variational_lower_bound(&sys, &cand, 1.0) {
        Err(Error::FormBoundViolated { witness, value, .. }) => {
            assert_eq!(witness.len(), n);
            assert!(value > 1.0);
        }
        other => panic!("expected a violation, got {other:?}"),
    }
}

#[test]
fn rank_perturbation_bounds() {
    let chain = GammaSystem::bloch(Box::new(HoppingFamily::chain_laplacian(2)), ThetaGrid::uniform(32)).unwrap();
    let family = HoppingFamily::chain_laplacian(2);
    use covmorse::gamma_dim::FiberFamily;
    let mu = 2.0;
    // push the lower band up by μ
    let rec = rank_perturbation_check(
        &chain,
        |th| {
            let h = family.fiber(th).unwrap().to_dense();
            let (_, v) = dense_eigh(&h);
            let low = DMatrix::from_fn(2, 1, |i, _| v[(i, 0)]);
            &low * low.adjoint() * C64::new(mu, 0.0)
        },
        mu,
    )
    .unwrap();
    assert!((rec.p - 1.0).abs() < 1e-12);
    assert!(rec.holds && rec.n_gamma <= 1.0 + 1e-12);

    let rec = rank_perturbation_check(&chain, |_| DMatrix::identity(2, 2) * C64::new(3.0, 0.0), 3.0).unwrap();
    assert!((rec.p - 2.0).abs() < 1e-12 && rec.holds);

    let rec = rank_perturbation_check(&chain, |_| DMatrix::zeros(2, 2), -0.5).unwrap();
    assert_eq!(rec.p, 0.0);
    assert_eq!(rec.n_gamma, 0.0);

    assert!(matches!(
        rank_perturbation_check(&chain, |_| DMatrix::zeros(2, 2), 1.0),
        Err(Error::PerturbationBelowMu(_))
    ));
}

#[test]
fn bloch_count_is_monotone_on_a_fixed_grid() {
    let m = build_torus_model(1, DMatrix::identity(2, 2), 8, CoverSpec::FreeAbelian(2)).unwrap();
    let sys = dolbeault_system(&m, 1.0, 1, 0, ThetaGrid::uniform(8));
    let mut last = -1.0;
    for lambda in [0.3, 1.0, 5.0, 13.0, 20.0, 60.0] {
        let v = gamma_counting(&sys, lambda).unwrap().value;
        assert!(v >= last);
        last = v;
    }
}

#[test]
fn euler_ranks_ignore_equivariant_unitaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cx = random_equivariant_complex(&mut rng, 3, &[2, 4, 3]);
    let base = euler_inequalities(&cx).unwrap();
    // U_q = I_m ⊗ V_q commutes with the regular action
    let unitary = |n: usize, seed: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let a = DMatrix::from_fn(n, n, |_, _| C64::new(r.gen::<f64>() - 0.5, r.gen::<f64>() - 0.5));
        let v = a.qr().q();
        let mut u = DMatrix::from_element(3 * n, 3 * n, C64::new(0.0, 0.0));
        for g in 0..3 {
            u.view_mut((g * n, g * n), (n, n)).copy_from(&v);
        }
        u
    };
    let us: Vec<_> = cx.multiplicities.iter().enumerate().map(|(q, &n)| unitary(n, q as u64)).collect();
    let ds = cx
        .differentials
        .iter()
        .enumerate()
        .map(|(q, d)| &us[q + 1] * d * us[q].adjoint())
        .collect();
    let moved = FiniteGammaComplex::new(3, cx.multiplicities.clone(), ds).unwrap();
    let after = euler_inequalities(&moved).unwrap();
    for (a, b) in base.rows.iter().zip(&after.rows) {
        assert!((a.h_q - b.h_q).abs() < 1e-12);
    }
}
