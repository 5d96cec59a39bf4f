//! Eigenvalue counting by inertia, low-spectrum extraction and the
//! semiclassical Weyl comparison.

use crate::error::{Error, Result};
use crate::geomodel::{link_phases_from_curvature, CurvatureSpec, ModelManifold};
use crate::lattice_op::{
    assemble_dolbeault_with, build_carrier, distance_to, AssemblyOptions, BoundaryCondition,
    LatticeOperator,
};
use crate::linalg::eigs::{dense_eigenvalues, lowest_eigenpairs, SubspaceOptions};
use crate::linalg::ldl::Skyline;
use crate::linalg::ordering::reverse_cuthill_mckee;
use crate::linalg::CsrMatrix;
use crate::pointspec::{jump_points, subset_density};
use serde::{Deserialize, Serialize};

pub const SHIFT_REL: f64 = 1e-8;
pub const MAX_RETRIES: usize = 5;
const PIVOT_REL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMethod {
    Inertia,
    Lanczos,
    Dense,
}

impl CountMethod {
    pub fn label(&self) -> &'static str {
        match self {
            CountMethod::Inertia => "inertia",
            CountMethod::Lanczos => "lanczos",
            CountMethod::Dense => "dense",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralCountResult {
    pub lambda: f64,
    pub count: usize,
    pub method: CountMethod,
    pub certified: bool,
    pub delta: f64,
}

/// Reusable inertia counter for one Hermitian matrix.
pub struct InertiaCounter<'a> {
    matrix: &'a CsrMatrix,
    skyline: Skyline,
    norm: f64,
    bounds: (f64, f64),
}

impl<'a> InertiaCounter<'a> {
    pub fn new(matrix: &'a CsrMatrix) -> Self {
        let skyline = Skyline::new(matrix, reverse_cuthill_mckee(matrix));
        InertiaCounter {
            matrix,
            skyline,
            norm: matrix.norm_bound(),
            bounds: matrix.gershgorin(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Number of eigenvalues strictly below σ, retrying outward on breakdown.
    fn below(&self, sigma: f64, step: f64, lambda: f64) -> Result<usize> {
        let tiny = PIVOT_REL * self.norm.max(f64::MIN_POSITIVE);
        let mut shift = sigma;
        for attempt in 0..=MAX_RETRIES {
            match self.skyline.factor(self.matrix, shift, tiny) {
                Ok(f) => return Ok(f.inertia().negative),
                Err(_) => {
                    shift = sigma + step * 2f64.powi(attempt as i32 + 1);
                }
            }
        }
        Err(Error::FactorizationBreakdown {
            lambda,
            retries: MAX_RETRIES,
        })
    }

    /// Number of eigenvalues ≤ λ.
    pub fn count(&self, lambda: f64) -> Result<SpectralCountResult> {
        let n = self.matrix.nrows();
        let delta = SHIFT_REL * self.norm.max(f64::MIN_POSITIVE);
        let res = |count, certified| SpectralCountResult {
            lambda,
            count,
            method: CountMethod::Inertia,
            certified,
            delta,
        };
        if n == 0 {
            return Ok(res(0, true));
        }
        if lambda + delta < self.bounds.0 {
            return Ok(res(0, true));
        }
        if lambda - delta > self.bounds.1 {
            return Ok(res(n, true));
        }
        let hi = self.below(lambda + delta, delta, lambda)?;
        let lo = self.below(lambda - delta, -delta, lambda)?;
        Ok(res(hi, hi == lo))
    }
}

pub fn count_below_matrix(matrix: &CsrMatrix, lambda: f64) -> Result<SpectralCountResult> {
    InertiaCounter::new(matrix).count(lambda)
}

/// N(λ, H): eigenvalues ≤ λ of the full operator (twist multiplicity included).
pub fn count_below(h: &LatticeOperator, lambda: f64) -> Result<SpectralCountResult> {
    let mut r = count_below_matrix(&h.matrix, lambda)?;
    r.count *= h.multiplicity;
    Ok(r)
}

/// Dense-diagonalization count, the small-instance oracle.
pub fn dense_count(matrix: &CsrMatrix, lambda: f64) -> SpectralCountResult {
    let ev = dense_eigenvalues(&matrix.to_dense());
    let delta = SHIFT_REL * matrix.norm_bound().max(f64::MIN_POSITIVE);
    let count = ev.iter().filter(|&&e| e <= lambda).count();
    let certified = ev.iter().all(|&e| (e - lambda).abs() > delta);
    SpectralCountResult {
        lambda,
        count,
        method: CountMethod::Dense,
        certified,
        delta,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowSpectrum {
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub norm: f64,
    pub method: CountMethod,
}

/// The m smallest eigenvalues of the full operator with residual norms.
pub fn lowest_eigs(h: &LatticeOperator, m: usize) -> Result<LowSpectrum> {
    let r = h.multiplicity.max(1);
    let dim = h.dimension();
    if m > dim {
        return Err(Error::NoConvergence(format!(
            "asked for {m} eigenvalues of a {dim}-dimensional operator"
        )));
    }
    let need = m.div_ceil(r);
    let opts = SubspaceOptions {
        psd: h.psd,
        ..Default::default()
    };
    let p = lowest_eigenpairs(&h.matrix, need, &opts).map_err(Error::NoConvergence)?;
    let tol = opts.tol_rel * p.norm;
    if let Some(bad) = p.residuals.iter().find(|&&x| x > tol) {
        return Err(Error::NoConvergence(format!("residual {bad:e} above {tol:e}")));
    }
    let mut values = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    for (v, res) in p.values.iter().zip(&p.residuals) {
        for _ in 0..r {
            values.push(*v);
            residuals.push(*res);
        }
    }
    values.truncate(m);
    residuals.truncate(m);
    Ok(LowSpectrum {
        values,
        residuals,
        norm: p.norm,
        method: if p.dense { CountMethod::Dense } else { CountMethod::Lanczos },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMeasurement {
    /// dim ker, twist multiplicity included.
    pub dimension: usize,
    /// Largest eigenvalue assigned to the kernel (0 if none).
    pub gap_threshold: f64,
    pub first_nonzero: f64,
    /// Geometric-mean placement inside the gap.
    pub mid_gap: f64,
    /// Inertia count at `mid_gap`.
    pub inertia_check: usize,
    pub eigenvalues_used: usize,
}

/// Ratio that separates a kernel cluster from the next eigenvalue.
pub const GAP_RATIO: f64 = 4.0;

/// Locate the spectral gap above the harmonic cluster.
///
/// Among gaps (e_i, e_{i+1}) of the sorted low spectrum, with e_0 := 0 and
/// e_{i+1} ≥ GAP_RATIO·e_i, the widest one is taken. The window is doubled
/// until the choice is backed by enough spectrum above it.
pub fn kernel_dimension(h: &LatticeOperator, start: usize, seed: u64) -> Result<KernelMeasurement> {
    let r = h.multiplicity.max(1);
    let n = h.matrix.nrows();
    if n == 0 {
        return Ok(KernelMeasurement {
            dimension: 0,
            gap_threshold: 0.0,
            first_nonzero: f64::INFINITY,
            mid_gap: 0.0,
            inertia_check: 0,
            eigenvalues_used: 0,
        });
    }
    let mut m = start.max(8).min(n);
    loop {
        let opts = SubspaceOptions {
            psd: h.psd,
            seed,
            ..Default::default()
        };
        let p = lowest_eigenpairs(&h.matrix, m, &opts).map_err(Error::NoConvergence)?;
        let floor = 1e-10 * p.norm;
        let mut e = vec![0.0];
        e.extend(p.values.iter().map(|&x| x.max(0.0)));
        let mut best: Option<usize> = None;
        for i in 0..m {
            if e[i + 1] > floor && e[i] * GAP_RATIO <= e[i + 1] {
                let gap = e[i + 1] - e[i];
                if best.map_or(true, |b| gap > e[b + 1] - e[b]) {
                    best = Some(i);
                }
            }
        }
        let conclusive = |i: usize| {
            let decisive = i >= 1 && e[i + 1] >= 10.0 * e[i].max(floor) && m >= i + 4;
            decisive || e[m] >= 2.0 * e[i + 1]
        };
        let done = m == n;
        match best {
            Some(i) if done || conclusive(i) => {
                let lo = e[i].max(1e-6 * e[i + 1]);
                let mid = (lo * e[i + 1]).sqrt();
                let check = count_below_matrix(&h.matrix, mid)?;
                return Ok(KernelMeasurement {
                    dimension: i * r,
                    gap_threshold: e[i],
                    first_nonzero: e[i + 1],
                    mid_gap: mid,
                    inertia_check: check.count * r,
                    eigenvalues_used: m,
                });
            }
            None if done => {
                // whole spectrum tiny: everything is kernel
                return Ok(KernelMeasurement {
                    dimension: n * r,
                    gap_threshold: e[n],
                    first_nonzero: f64::INFINITY,
                    mid_gap: e[n].max(floor) * 2.0,
                    inertia_check: n * r,
                    eigenvalues_used: n,
                });
            }
            _ => {
                m = (2 * m).min(n);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeylDomain {
    U,
    Us(f64),
}

#[derive(Clone, Debug)]
pub struct WeylOptions {
    pub domain: WeylDomain,
    /// Refine the grid as resolution ∝ √k, anchored at (k_ref, resolution).
    pub refine: Option<(u32, Vec<usize>)>,
    /// Compare against ν̄ (right limit) instead of ν.
    pub right_limit: bool,
    pub assembly: AssemblyOptions,
    pub twist_rank: usize,
}

impl Default for WeylOptions {
    fn default() -> Self {
        WeylOptions {
            domain: WeylDomain::U,
            refine: None,
            right_limit: false,
            assembly: AssemblyOptions::default(),
            twist_rank: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeylRow {
    pub k: u32,
    pub resolution: Vec<usize>,
    pub count: usize,
    pub certified: bool,
    pub measured: f64,
    pub predicted: f64,
    pub relative_error: f64,
}

/// k^{−n}·N(λ, (1/k)Δ''_{k,q}|Ω) against r·Σ_J ∫_Ω ν_B(2λ + α_{C(J)} − α_J).
pub fn weyl_limit_compare(
    model: &ModelManifold,
    spec: &CurvatureSpec,
    q: usize,
    lambda: f64,
    k_list: &[u32],
    opts: &WeylOptions,
) -> Result<Vec<WeylRow>> {
    let n = model.complex_dim;
    let r = opts.twist_rank.max(1);
    if !opts.right_limit {
        check_lambda_margin(model, spec, q, lambda)?;
    }
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let m = match &opts.refine {
            Some((k_ref, res)) => {
                let f = (k as f64 / *k_ref as f64).sqrt();
                model.with_resolution(res.iter().map(|&x| (x as f64 * f).round() as usize).collect())?
            }
            None => model.clone(),
        };
        let field = spec.sample(&m, r)?;
        if q > n {
            rows.push(WeylRow {
                k,
                resolution: m.resolution.clone(),
                count: 0,
                certified: true,
                measured: 0.0,
                predicted: 0.0,
                relative_error: 0.0,
            });
            continue;
        }
        let links = link_phases_from_curvature(&m, &field, k)?;
        let bc = match opts.domain {
            WeylDomain::U => BoundaryCondition::DirichletU,
            WeylDomain::Us(s) => BoundaryCondition::DirichletUs(s),
        };
        let op = assemble_dolbeault_with(&m, &links, q, &bc, r, &opts.assembly)
            .map_err(|e| e.at(k, q, Some(lambda)))?;
        let c = count_below(&op, lambda).map_err(|e| e.at(k, q, Some(lambda)))?;
        let measured = c.count as f64 / (k as f64).powi(n as i32);
        let carrier = build_carrier(&m, crate::lattice_op::carrier_tiles_for(&m, match opts.domain {
            WeylDomain::U => 0.0,
            WeylDomain::Us(s) => s,
        }))?;
        let region: Vec<usize> = match opts.domain {
            WeylDomain::U => carrier.translates[0].clone(),
            WeylDomain::Us(s) => {
                let d = distance_to(&carrier.grid, &carrier.translates[0]);
                (0..carrier.grid.n_sites()).filter(|&x| d[x] < s).collect()
            }
        };
        let dv = m.cell_volume();
        let densities = crate::par::try_map(&region, |&x| {
            let site = carrier.to_model[x];
            let alphas = field.diagonal(site).ok_or_else(|| {
                Error::UnsupportedField("Weyl comparison needs a diagonal field".into())
            })?;
            subset_density(&alphas, q, lambda, opts.right_limit)
        })?;
        let predicted = r as f64 * dv * densities.iter().sum::<f64>();
        let relative_error = if predicted != 0.0 {
            (measured - predicted) / predicted
        } else {
            measured
        };
        rows.push(WeylRow {
            k,
            resolution: m.resolution.clone(),
            count: c.count,
            certified: c.certified,
            measured,
            predicted,
            relative_error,
        });
    }
    Ok(rows)
}

/// Distance from λ to the nearest jump of the Weyl prediction, or an error
/// when λ sits on one.
pub fn check_lambda_margin(model: &ModelManifold, spec: &CurvatureSpec, q: usize, lambda: f64) -> Result<f64> {
    let margin = 1e-6 * lambda.abs().max(1.0);
    let field = spec.sample(model, 1)?;
    let mut seen: Vec<Vec<f64>> = Vec::new();
    let mut nearest = f64::INFINITY;
    for &s in model.base_sites() {
        let Some(a) = field.diagonal(s) else { continue };
        if seen.contains(&a) {
            continue;
        }
        for j in jump_points(&a, q, lambda + 1.0) {
            let d = (j - lambda).abs();
            if d < margin {
                return Err(Error::LambdaOnJump {
                    lambda,
                    level: j,
                    margin,
                });
            }
            nearest = nearest.min(d);
        }
        seen.push(a);
        if seen.len() > 64 {
            break;
        }
    }
    Ok(nearest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;

    fn chain_dirichlet(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, C64::new(2.0, 0.0)));
            if i + 1 < n {
                t.push((i, i + 1, C64::new(-1.0, 0.0)));
                t.push((i + 1, i, C64::new(-1.0, 0.0)));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn two_site_chain() {
        let a = chain_dirichlet(2);
        let c = count_below_matrix(&a, 2.0).unwrap();
        assert_eq!(c.count, 1);
        assert!(c.certified);
        let (lo, hi) = a.gershgorin();
        assert_eq!(count_below_matrix(&a, lo - 1.0).unwrap().count, 0);
        assert_eq!(count_below_matrix(&a, hi + 1.0).unwrap().count, 2);
    }

    #[test]
    fn eigenvalue_on_lambda_is_uncertified() {
        let a = chain_dirichlet(2);
        let c = count_below_matrix(&a, 1.0).unwrap();
        assert_eq!(c.count, 1);
        assert!(!c.certified);
    }

    #[test]
    fn three_by_three_full_spectrum() {
        let a = CsrMatrix::from_dense(&nalgebra::DMatrix::from_row_slice(
            3,
            3,
            &[
                C64::new(2.0, 0.0),
                C64::new(1.0, 1.0),
                C64::new(0.0, 0.0),
                C64::new(1.0, -1.0),
                C64::new(3.0, 0.0),
                C64::new(0.0, 0.5),
                C64::new(0.0, 0.0),
                C64::new(0.0, -0.5),
                C64::new(-1.0, 0.0),
            ],
        ));
        let op = LatticeOperator::from_matrix(a, BoundaryCondition::Periodic);
        let s = lowest_eigs(&op, 3).unwrap();
        // each returned value must annihilate det(A − x)
        let d = op.matrix.to_dense();
        for &x in &s.values {
            let m = &d - nalgebra::DMatrix::<C64>::identity(3, 3) * C64::new(x, 0.0);
            assert!(m.determinant().norm() < 1e-10);
        }
    }
}
