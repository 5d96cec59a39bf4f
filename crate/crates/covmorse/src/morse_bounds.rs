//! Morse integrals I^q and the weak, strong and Riemann–Roch bound families.

use crate::error::{Error, Result};
use crate::geomodel::{CurvatureField, ModelManifold};
use crate::pointspec::curvature_eigenvalues;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const VOLUME_NORMALIZATION: &str =
    "flat Riemannian dV; (i/2pi c)^n/n! integrates as prod_j (alpha_j/2pi) dV";

/// Slacks within this relative distance of zero are recorded as exactly zero.
pub const SLACK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseReport {
    pub integrals_i: Vec<f64>,
    pub weak_bounds: Vec<f64>,
    pub strong_bounds: Vec<f64>,
    pub rr_value: f64,
    pub twist_rank: usize,
    pub volume_normalization: String,
    pub degenerate_volume: f64,
}

impl MorseReport {
    pub fn n(&self) -> usize {
        self.integrals_i.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
struct CellTally {
    signed: Vec<f64>,
    degenerate: f64,
}

fn tally(field: &CurvatureField, model: &ModelManifold) -> Result<CellTally> {
    let n = model.complex_dim;
    let dv = model.cell_volume();
    let norm = (2.0 * PI).powi(n as i32);
    let per_cell = crate::par::try_map(model.base_sites(), |&s| {
        let p = curvature_eigenvalues(&field.values[s])?;
        let w = p.alphas.iter().product::<f64>().abs() / norm * dv;
        Ok::<_, Error>((p, w))
    })?;
    let mut signed = vec![0.0; n + 1];
    let mut degenerate = 0.0;
    for (p, w) in per_cell {
        if p.degenerate {
            degenerate += dv;
        } else {
            signed[p.signature_q] += w;
        }
    }
    Ok(CellTally { signed, degenerate })
}

/// I^q = r·Σ_{cells in X(q)} (2π)^{−n}|α_1⋯α_n|·dV over one fundamental domain.
pub fn morse_integral(field: &CurvatureField, model: &ModelManifold, q: usize) -> Result<f64> {
    if q > model.complex_dim {
        return Err(Error::InvalidModel(format!(
            "form degree {q} exceeds dimension {}",
            model.complex_dim
        )));
    }
    let t = tally(field, model)?;
    Ok(field.twist_rank as f64 * t.signed[q])
}

/// r·(2π)^{−n}∫ α_1⋯α_n dV without stratification.
pub fn total_curvature_integral(field: &CurvatureField, model: &ModelManifold) -> Result<f64> {
    let n = model.complex_dim;
    let dv = model.cell_volume();
    let vals = crate::par::try_map(model.base_sites(), |&s| {
        curvature_eigenvalues(&field.values[s]).map(|p| p.alphas.iter().product::<f64>())
    })?;
    Ok(field.twist_rank as f64 * dv * vals.iter().sum::<f64>() / (2.0 * PI).powi(n as i32))
}

/// Bound coefficients from the Morse integrals.
pub fn theorem_bounds(integrals_i: Vec<f64>, twist_rank: usize, degenerate_volume: f64) -> MorseReport {
    let weak_bounds = integrals_i.clone();
    let strong_bounds = (0..integrals_i.len())
        .map(|q| alternating(&integrals_i, q))
        .collect();
    let rr_value = integrals_i
        .iter()
        .enumerate()
        .map(|(j, x)| if j % 2 == 0 { *x } else { -*x })
        .sum();
    MorseReport {
        integrals_i,
        weak_bounds,
        strong_bounds,
        rr_value,
        twist_rank,
        volume_normalization: VOLUME_NORMALIZATION.to_string(),
        degenerate_volume,
    }
}

pub fn morse_report(field: &CurvatureField, model: &ModelManifold) -> Result<MorseReport> {
    let t = tally(field, model)?;
    let r = field.twist_rank as f64;
    let integrals = t.signed.iter().map(|x| r * x).collect();
    Ok(theorem_bounds(integrals, field.twist_rank, t.degenerate))
}

/// Σ_{j≤q} (−1)^{q−j} x_j
pub fn alternating(x: &[f64], q: usize) -> f64 {
    x[..=q]
        .iter()
        .enumerate()
        .map(|(j, v)| if (q - j) % 2 == 0 { *v } else { -*v })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityRow {
    pub q: usize,
    pub bound: f64,
    pub measured: f64,
    pub slack: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseVerdict {
    pub k: u32,
    pub weak: Vec<InequalityRow>,
    pub strong: Vec<InequalityRow>,
    pub rr_residual: f64,
}

impl MorseVerdict {
    pub fn all_hold(&self) -> bool {
        self.weak.iter().chain(&self.strong).all(|r| r.holds)
    }
}

fn row(q: usize, bound: f64, measured: f64) -> InequalityRow {
    let tol = SLACK_TOL * bound.abs().max(measured.abs()).max(1.0);
    let mut slack = bound - measured;
    if slack.abs() <= tol {
        slack = 0.0;
    }
    InequalityRow {
        q,
        bound,
        measured,
        slack,
        holds: slack >= 0.0,
    }
}

/// Compare measured Γ-dimensions h_q at power k against k^n times the bounds.
pub fn check_inequalities(measured: &[f64], report: &MorseReport, k: u32) -> Result<MorseVerdict> {
    let n = report.n();
    if measured.len() != n + 1 || measured.iter().any(|h| !h.is_finite() || *h < 0.0) {
        return Err(Error::InvalidModel(format!(
            "expected {} finite nonnegative dimensions",
            n + 1
        )));
    }
    let kn = (k as f64).powi(n as i32);
    let weak = (0..=n).map(|q| row(q, kn * report.weak_bounds[q], measured[q])).collect();
    let strong = (0..=n)
        .map(|q| row(q, kn * report.strong_bounds[q], alternating(measured, q)))
        .collect();
    let euler: f64 = measured
        .iter()
        .enumerate()
        .map(|(j, h)| if j % 2 == 0 { *h } else { -*h })
        .sum();
    Ok(MorseVerdict {
        k,
        weak,
        strong,
        rr_residual: (euler - kn * report.rr_value).abs() / kn,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticVerdict {
    /// Leading k^n coefficient of each h_q, from the last two powers.
    pub coefficients: Vec<f64>,
    pub weak_holds: Vec<bool>,
    pub strong_holds: Vec<bool>,
    pub rr_coefficient: f64,
}

/// Leading-order comparison from a series of (k, h_0..h_n).
///
/// The coefficient is (h(k₂) − h(k₁))/(k₂ⁿ − k₁ⁿ), which cancels any
/// k-independent offset such as harmonic forms of the flat part.
pub fn asymptotic_verdict(series: &[(u32, Vec<f64>)], report: &MorseReport, tol: f64) -> Result<AsymptoticVerdict> {
    if series.len() < 2 {
        return Err(Error::InsufficientSeries);
    }
    let n = report.n();
    let (k1, h1) = &series[series.len() - 2];
    let (k2, h2) = &series[series.len() - 1];
    let d = (*k2 as f64).powi(n as i32) - (*k1 as f64).powi(n as i32);
    if d == 0.0 {
        return Err(Error::InsufficientSeries);
    }
    let coefficients: Vec<f64> = (0..=n).map(|q| (h2[q] - h1[q]) / d).collect();
    let weak_holds = (0..=n).map(|q| coefficients[q] <= report.weak_bounds[q] + tol).collect();
    let strong_holds = (0..=n)
        .map(|q| alternating(&coefficients, q) <= report.strong_bounds[q] + tol)
        .collect();
    let rr_coefficient = alternating(&coefficients, n) * if n % 2 == 0 { 1.0 } else { -1.0 };
    Ok(AsymptoticVerdict {
        coefficients,
        weak_holds,
        strong_holds,
        rr_coefficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomodel::{
        build_torus_model, constant_curvature_field, curvature_field_from_fn, CoverSpec,
    };
    use crate::linalg::C64;
    use nalgebra::DMatrix;

    fn torus(n: usize, res: usize) -> ModelManifold {
        build_torus_model(n, DMatrix::identity(2 * n, 2 * n), res, CoverSpec::Trivial).unwrap()
    }

    #[test]
    fn elliptic_degree() {
        let m = torus(1, 8);
        for d in 1..4 {
            let f = constant_curvature_field(&m, &[2.0 * PI * d as f64], 1);
            assert!((morse_integral(&f, &m, 0).unwrap() - d as f64).abs() < 1e-12);
            assert_eq!(morse_integral(&f, &m, 1).unwrap(), 0.0);
            let rep = morse_report(&f, &m).unwrap();
            assert!((rep.rr_value - d as f64).abs() < 1e-12);
            assert!((rep.strong_bounds[1] + d as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn split_signature() {
        let m = torus(2, 4);
        let f = constant_curvature_field(&m, &[2.0 * PI, -2.0 * PI], 1);
        let rep = morse_report(&f, &m).unwrap();
        assert!(rep.integrals_i[0].abs() < 1e-15);
        assert!((rep.integrals_i[1] - 1.0).abs() < 1e-12);
        assert!(rep.integrals_i[2].abs() < 1e-15);
        assert!((rep.rr_value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_bounds_vanish() {
        let m = torus(1, 8);
        let f = constant_curvature_field(&m, &[0.0], 2);
        let rep = morse_report(&f, &m).unwrap();
        assert!(rep.integrals_i.iter().all(|x| *x == 0.0));
        assert!((rep.degenerate_volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stratum_additivity() {
        let m = torus(2, 4);
        let f = curvature_field_from_fn(&m, 2, |p| {
            let a = 3.0 * (2.0 * PI * p[0]).cos() + 0.3;
            let b = 2.0 * (2.0 * PI * p[2]).sin() - 0.7;
            let c = 0.4 * (2.0 * PI * p[1]).sin();
            DMatrix::from_row_slice(
                2,
                2,
                &[C64::new(a, 0.0), C64::new(c, c), C64::new(c, -c), C64::new(b, 0.0)],
            )
        })
        .unwrap();
        let rep = morse_report(&f, &m).unwrap();
        let total = total_curvature_integral(&f, &m).unwrap();
        assert!((rep.rr_value - total).abs() < 1e-10);
        assert!(rep.integrals_i.iter().all(|x| *x >= 0.0));
        let top = rep.strong_bounds[2];
        assert!((top - rep.rr_value).abs() < 1e-12);
    }

    #[test]
    fn verdicts() {
        let m = torus(1, 8);
        let f = constant_curvature_field(&m, &[4.0 * PI], 1);
        let rep = morse_report(&f, &m).unwrap();
        for k in 1..5u32 {
            let v = check_inequalities(&[2.0 * k as f64, 0.0], &rep, k).unwrap();
            assert!(v.all_hold());
            assert!(v.rr_residual < 1e-12);
        }
        let v = check_inequalities(&[0.0, 0.0], &rep, 3).unwrap();
        assert!(v.weak.iter().all(|r| r.holds));
        let v = check_inequalities(&[12.0, 0.0], &rep, 3).unwrap();
        assert!(!v.weak[0].holds);
    }

    #[test]
    fn asymptotic_needs_two_points() {
        let m = torus(1, 8);
        let f = constant_curvature_field(&m, &[2.0 * PI], 1);
        let rep = morse_report(&f, &m).unwrap();
        assert_eq!(
            asymptotic_verdict(&[(2, vec![2.0, 0.0])], &rep, 1e-9),
            Err(Error::InsufficientSeries)
        );
        let v = asymptotic_verdict(&[(2, vec![3.0, 1.0]), (4, vec![5.0, 1.0])], &rep, 1e-9).unwrap();
        assert!((v.coefficients[0] - 1.0).abs() < 1e-12);
        assert!(v.weak_holds.iter().all(|b| *b));
        assert!((v.rr_coefficient - 1.0).abs() < 1e-12);
    }
}
