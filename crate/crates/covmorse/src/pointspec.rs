//! Pointwise curvature spectra, Morse strata and the Landau-level density ν_B.

use crate::error::{Error, Result};
use crate::geomodel::{CurvatureField, ModelManifold};
use crate::linalg::eigs::dense_eigenvalues;
use crate::linalg::C64;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Relative threshold below which a curvature eigenvalue counts as zero.
pub const EPS_DEGENERATE: f64 = 1e-9;
/// Relative tolerance for "level sum equals λ" in the exponent-zero case.
pub const LEVEL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSpectrum {
    pub alphas: Vec<f64>,
    pub signature_q: usize,
    pub degenerate: bool,
}

impl PointSpectrum {
    pub fn from_alphas(mut alphas: Vec<f64>) -> Self {
        alphas.sort_by(f64::total_cmp);
        let scale = alphas.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let eps = EPS_DEGENERATE * scale;
        let degenerate = scale == 0.0 || alphas.iter().any(|a| a.abs() <= eps);
        let signature_q = alphas.iter().filter(|&&a| a < -eps).count();
        PointSpectrum {
            alphas,
            signature_q,
            degenerate,
        }
    }

    pub fn n(&self) -> usize {
        self.alphas.len()
    }
}

pub fn curvature_eigenvalues(m: &DMatrix<C64>) -> Result<PointSpectrum> {
    let defect = (m - m.adjoint()).iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let scale = m.iter().fold(1.0f64, |a, z| a.max(z.norm()));
    if m.nrows() != m.ncols() || defect > 1e-12 * scale {
        return Err(Error::NotHermitian { site: 0, defect });
    }
    Ok(PointSpectrum::from_alphas(dense_eigenvalues(m)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    /// volume of X(q), q = 0..n
    pub volumes: Vec<f64>,
    pub degenerate_volume: f64,
}

/// Volumes of X(q) over one fundamental domain of the base.
pub fn stratify(field: &CurvatureField, model: &ModelManifold) -> Result<Strata> {
    let n = model.complex_dim;
    let dv = model.cell_volume();
    let specs = crate::par::try_map(model.base_sites(), |&s| curvature_eigenvalues(&field.values[s]))?;
    let mut volumes = vec![0.0; n + 1];
    let mut degenerate_volume = 0.0;
    for p in specs {
        if p.degenerate {
            degenerate_volume += dv;
        } else {
            volumes[p.signature_q] += dv;
        }
    }
    Ok(Strata {
        volumes,
        degenerate_volume,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuBParams {
    pub real_dim: usize,
    /// B_1 ≥ … ≥ B_s > 0
    pub magnitudes: Vec<f64>,
    pub truncation: usize,
}

impl NuBParams {
    pub fn new(real_dim: usize, mut magnitudes: Vec<f64>, truncation: usize) -> Result<Self> {
        if real_dim == 0 || real_dim % 2 != 0 {
            return Err(Error::InvalidDensityParams(format!(
                "real dimension {real_dim} must be even and positive"
            )));
        }
        if magnitudes.len() > real_dim / 2 {
            return Err(Error::InvalidDensityParams(format!(
                "{} field magnitudes exceed N/2 = {}",
                magnitudes.len(),
                real_dim / 2
            )));
        }
        if magnitudes.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::InvalidDensityParams("field magnitudes must be positive".into()));
        }
        magnitudes.sort_by(|a, b| b.total_cmp(a));
        Ok(NuBParams {
            real_dim,
            magnitudes,
            truncation,
        })
    }

    /// Smallest truncation that keeps every level ≤ λ.
    pub fn for_lambda(real_dim: usize, magnitudes: Vec<f64>, lambda: f64) -> Result<Self> {
        let mut p = Self::new(real_dim, magnitudes, 0)?;
        if let Some(&bmin) = p.magnitudes.last() {
            let base: f64 = p.magnitudes.iter().sum();
            let slack = lambda * (1.0 + LEVEL_TOL) + LEVEL_TOL;
            if slack >= base {
                p.truncation = ((slack - base) / (2.0 * bmin)).floor() as usize;
            }
        }
        Ok(p)
    }

    pub fn s(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn prefactor(&self) -> f64 {
        let n = self.real_dim;
        let s = self.s();
        let e = n / 2 - s;
        let fact: f64 = (1..=e).map(|i| i as f64).product();
        2f64.powi(s as i32 - n as i32) * PI.powf(-(n as f64) / 2.0) / fact
            * self.magnitudes.iter().product::<f64>()
    }
}

fn level_sum(params: &NuBParams, lambda: f64, right_limit: bool) -> Result<f64> {
    let s = params.s();
    let e = (params.real_dim / 2 - s) as i32;
    let tol = LEVEL_TOL * lambda.abs().max(1.0);
    if s > 0 {
        let bmin = *params.magnitudes.last().unwrap();
        let base: f64 = params.magnitudes.iter().sum();
        let omitted = base + 2.0 * (params.truncation as f64 + 1.0) * bmin;
        let reach = if right_limit { lambda + tol } else { lambda };
        if omitted <= reach {
            return Err(Error::TruncationInsufficient {
                truncation: params.truncation,
                omitted_level: omitted,
                lambda,
            });
        }
    }
    let bracket = |level: f64| -> f64 {
        let x = lambda - level;
        if e == 0 {
            let on = if right_limit { x >= -tol } else { x > tol };
            if on {
                1.0
            } else {
                0.0
            }
        } else if x > 0.0 {
            x.powi(e)
        } else {
            0.0
        }
    };
    let cut = lambda + tol;
    fn walk(
        b: &[f64],
        j: usize,
        partial: f64,
        rest_min: &[f64],
        p_max: usize,
        cut: f64,
        f: &dyn Fn(f64) -> f64,
    ) -> f64 {
        if j == b.len() {
            return f(partial);
        }
        let mut acc = 0.0;
        for p in 0..=p_max {
            let lvl = partial + (2 * p + 1) as f64 * b[j];
            if lvl + rest_min[j + 1] > cut {
                break;
            }
            acc += walk(b, j + 1, lvl, rest_min, p_max, cut, f);
        }
        acc
    }
    let b = &params.magnitudes;
    let mut rest_min = vec![0.0; s + 1];
    for j in (0..s).rev() {
        rest_min[j] = rest_min[j + 1] + b[j];
    }
    Ok(walk(b, 0, 0.0, &rest_min, params.truncation, cut, &bracket))
}

/// ν_B(λ) with the convention [x]⁰₊ = 0 for x ≤ 0.
pub fn nu_b(lambda: f64, params: &NuBParams) -> Result<f64> {
    if lambda <= 0.0 {
        return Ok(0.0);
    }
    Ok(params.prefactor() * level_sum(params, lambda, false)?)
}

/// Right limit ν̄_B(λ) = lim_{ε↘0} ν_B(λ+ε).
pub fn nu_b_bar(lambda: f64, params: &NuBParams) -> Result<f64> {
    if lambda < 0.0 {
        return Ok(0.0);
    }
    Ok(params.prefactor() * level_sum(params, lambda, true)?)
}

fn subsets(n: usize, q: usize) -> impl Iterator<Item = u32> {
    (0u32..(1u32 << n)).filter(move |m| m.count_ones() as usize == q)
}

/// Σ_{|J|=q} ν_B(2λ + α_{C(J)} − α_J) for arbitrary α (zero α allowed).
pub fn subset_density(alphas: &[f64], q: usize, lambda: f64, right_limit: bool) -> Result<f64> {
    let n = alphas.len();
    if q > n {
        return Ok(0.0);
    }
    let scale = alphas.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let mags: Vec<f64> = alphas
        .iter()
        .map(|a| a.abs())
        .filter(|&b| b > EPS_DEGENERATE * scale && b > 0.0)
        .collect();
    let mut total = 0.0;
    for mask in subsets(n, q) {
        let mut arg = 2.0 * lambda;
        for (j, a) in alphas.iter().enumerate() {
            if mask & (1 << j) != 0 {
                arg -= a;
            } else {
                arg += a;
            }
        }
        let p = NuBParams::for_lambda(2 * n, mags.clone(), arg.max(0.0))?;
        total += if right_limit { nu_b_bar(arg, &p)? } else { nu_b(arg, &p)? };
    }
    Ok(total)
}

/// Pointwise integrand of the Weyl/Demailly limit per unit twist rank.
pub fn pointwise_density(alpha: &PointSpectrum, q: usize, lambda: f64) -> Result<f64> {
    if alpha.degenerate {
        return Err(Error::DegeneratePoint);
    }
    subset_density(&alpha.alphas, q, lambda, false)
}

/// Right-limit version of [`pointwise_density`].
pub fn pointwise_density_bar(alpha: &PointSpectrum, q: usize, lambda: f64) -> Result<f64> {
    if alpha.degenerate {
        return Err(Error::DegeneratePoint);
    }
    subset_density(&alpha.alphas, q, lambda, true)
}

/// (2π)^{−n}|α_1⋯α_n| on X(q), else 0.
pub fn pointwise_morse_limit(alpha: &PointSpectrum, q: usize) -> Result<f64> {
    if alpha.degenerate {
        return Err(Error::DegeneratePoint);
    }
    if alpha.signature_q != q {
        return Ok(0.0);
    }
    let n = alpha.n() as i32;
    Ok((2.0 * PI).powi(-n) * alpha.alphas.iter().product::<f64>().abs())
}

/// Level sums Σ_j (2p_j+1)B_j − (α_{C(J)} − α_J) in units of 2λ, i.e. the
/// values of λ at which the subset density of α jumps (exponent-zero case only).
pub fn jump_points(alphas: &[f64], q: usize, lambda_max: f64) -> Vec<f64> {
    let n = alphas.len();
    let scale = alphas.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let mags: Vec<f64> = alphas
        .iter()
        .map(|a| a.abs())
        .filter(|&b| b > EPS_DEGENERATE * scale && b > 0.0)
        .collect();
    if mags.len() != n || q > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let pmax = ((2.0 * lambda_max + 2.0 * scale * n as f64) / (2.0 * mags.iter().cloned().fold(f64::INFINITY, f64::min))).ceil() as usize + 1;
    for mask in subsets(n, q) {
        let mut shift = 0.0;
        for (j, a) in alphas.iter().enumerate() {
            if mask & (1 << j) != 0 {
                shift -= a;
            } else {
                shift += a;
            }
        }
        let mut idx = vec![0usize; n];
        loop {
            let lvl: f64 = idx.iter().zip(&mags).map(|(&p, b)| (2 * p + 1) as f64 * b).sum();
            let lam = (lvl - shift) / 2.0;
            if lam <= lambda_max && lam >= 0.0 {
                out.push(lam);
            }
            let mut j = 0;
            loop {
                if j == n {
                    break;
                }
                idx[j] += 1;
                if idx[j] <= pmax {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == n {
                break;
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * (1.0 + b.abs()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_values() {
        let p = NuBParams::new(2, vec![1.0], 10).unwrap();
        assert_eq!(nu_b(0.0, &p).unwrap(), 0.0);
        assert!((nu_b(2.5, &p).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((nu_b(3.5, &p).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert_eq!(nu_b(1.0, &p).unwrap(), 0.0);
        assert!((nu_b_bar(1.0, &p).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert_eq!(nu_b_bar(0.0, &p).unwrap(), 0.0);
        let free = NuBParams::new(2, vec![], 0).unwrap();
        assert!((nu_b(1.0, &free).unwrap() - 1.0 / (4.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn truncation_guard() {
        let p = NuBParams::new(2, vec![1.0], 0).unwrap();
        assert!(matches!(nu_b(3.5, &p), Err(Error::TruncationInsufficient { .. })));
    }

    #[test]
    fn pointwise_examples() {
        let a = 3.0;
        let s = PointSpectrum::from_alphas(vec![a]);
        assert!((pointwise_density_bar(&s, 0, 0.0).unwrap() - a / (2.0 * PI)).abs() < 1e-14);
        assert_eq!(pointwise_density_bar(&s, 1, 0.0).unwrap(), 0.0);
        let s2 = PointSpectrum::from_alphas(vec![2.0, 5.0]);
        assert!((pointwise_density_bar(&s2, 0, 0.0).unwrap() - 10.0 / (4.0 * PI * PI)).abs() < 1e-14);
        let m = PointSpectrum::from_alphas(vec![2.0 * PI, -2.0 * PI]);
        assert_eq!(m.signature_q, 1);
        assert!((pointwise_morse_limit(&m, 1).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(
            pointwise_density(&PointSpectrum::from_alphas(vec![0.0]), 0, 1.0),
            Err(Error::DegeneratePoint)
        ));
    }

    #[test]
    fn jump_points_of_single_plane() {
        // α = 1, q = 0: ν_B(2λ + 1) jumps where 2λ + 1 = 2p + 1
        let j = jump_points(&[1.0], 0, 2.5);
        assert_eq!(j, vec![0.0, 1.0, 2.0]);
    }
}
