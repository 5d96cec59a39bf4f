//! Flat complex tori, their covers, lattice grids and line-bundle link data.
//!
//! Real axes are ordered (x_1, y_1, x_2, y_2, …); complex plane j owns axes
//! 2j and 2j+1. Site indices are mixed-radix with axis 0 fastest.

use crate::error::{Error, Result};
use crate::linalg::C64;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;

pub const CHERN_TOL: f64 = 1e-9;

/// How a cover group is specified before it is turned into site maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverSpec {
    Trivial,
    /// Finite group generated by these maps of the grid.
    Finite(Vec<GroupGenerator>),
    /// Z^d acting by the periods of the first d axes.
    FreeAbelian(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupGenerator {
    /// Translation by whole grid steps along each axis.
    Shift(Vec<i64>),
    /// x ↦ c − x in grid units.
    PointReflection(Vec<i64>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum CoverGroup {
    /// Finite group; `elements[0]` is the identity, each element a site map.
    Finite { elements: Vec<Vec<usize>> },
    /// M = R^{2n} ⊃ Z^d-cover of the grid torus X along the first d axes.
    FreeAbelian(usize),
}

impl CoverGroup {
    pub fn order(&self) -> Option<usize> {
        match self {
            CoverGroup::Finite { elements } => Some(elements.len()),
            CoverGroup::FreeAbelian(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelManifold {
    pub complex_dim: usize,
    /// Columns are the period vectors of M (finite Γ) or of X (Γ = Z^d).
    pub lattice_basis: DMatrix<f64>,
    pub resolution: Vec<usize>,
    pub cover: CoverGroup,
    pub fundamental_domain: Vec<usize>,
    pub cover_spec: CoverSpec,
    strides: Vec<usize>,
}

impl ModelManifold {
    pub fn real_dim(&self) -> usize {
        2 * self.complex_dim
    }

    pub fn n_sites(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut c = Vec::with_capacity(self.resolution.len());
        let mut s = site;
        for &r in &self.resolution {
            c.push(s % r);
            s /= r;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Neighbour of `site` one step along `axis` (±1), with wrap-around.
    pub fn step(&self, site: usize, axis: usize, forward: bool) -> usize {
        let r = self.resolution[axis];
        let c = (site / self.strides[axis]) % r;
        let nc = if forward { (c + 1) % r } else { (c + r - 1) % r };
        site + nc * self.strides[axis] - c * self.strides[axis]
    }

    pub fn is_wrap(&self, site: usize, axis: usize) -> bool {
        (site / self.strides[axis]) % self.resolution[axis] == self.resolution[axis] - 1
    }

    pub fn determinant(&self) -> f64 {
        self.lattice_basis.determinant().abs()
    }

    pub fn cell_volume(&self) -> f64 {
        self.determinant() / self.n_sites() as f64
    }

    /// Per-axis spacing; only defined for a diagonal (rectangular) basis.
    pub fn mesh(&self) -> Result<Vec<f64>> {
        let d = self.real_dim();
        for i in 0..d {
            for j in 0..d {
                if i != j && self.lattice_basis[(i, j)].abs() > 1e-14 {
                    return Err(Error::InvalidModel(
                        "lattice operators need a rectangular period lattice".into(),
                    ));
                }
            }
        }
        Ok((0..d)
            .map(|a| self.lattice_basis[(a, a)].abs() / self.resolution[a] as f64)
            .collect())
    }

    pub fn mesh_h(&self) -> f64 {
        self.mesh()
            .map(|h| h.into_iter().fold(0.0, f64::max))
            .unwrap_or_else(|_| {
                (0..self.real_dim())
                    .map(|a| self.lattice_basis.column(a).norm() / self.resolution[a] as f64)
                    .fold(0.0, f64::max)
            })
    }

    /// Euclidean position of a site.
    pub fn position(&self, site: usize) -> Vec<f64> {
        let c = self.coords(site);
        let d = self.real_dim();
        let mut p = vec![0.0; d];
        for (a, &ca) in c.iter().enumerate() {
            let t = ca as f64 / self.resolution[a] as f64;
            for (i, pi) in p.iter_mut().enumerate() {
                *pi += t * self.lattice_basis[(i, a)];
            }
        }
        p
    }

    /// Volume of the base X = M/Γ.
    pub fn base_volume(&self) -> f64 {
        match &self.cover {
            CoverGroup::Finite { elements } => self.determinant() / elements.len() as f64,
            CoverGroup::FreeAbelian(_) => self.determinant(),
        }
    }

    /// Sites over which base-torus integrals are taken.
    pub fn base_sites(&self) -> &[usize] {
        &self.fundamental_domain
    }

    pub fn group_order(&self) -> Option<usize> {
        self.cover.order()
    }

    /// Same geometry and group on a different grid. Shift generators are
    /// rescaled and must stay integral.
    pub fn with_resolution(&self, resolution: Vec<usize>) -> Result<ModelManifold> {
        let spec = match &self.cover_spec {
            CoverSpec::Finite(gens) => {
                let scale = |v: &Vec<i64>| -> Result<Vec<i64>> {
                    v.iter()
                        .enumerate()
                        .map(|(a, &x)| {
                            let num = x * resolution[a] as i64;
                            let den = self.resolution[a] as i64;
                            if num % den != 0 {
                                Err(Error::InvalidModel(
                                    "group action does not survive the new resolution".into(),
                                ))
                            } else {
                                Ok(num / den)
                            }
                        })
                        .collect()
                };
                CoverSpec::Finite(
                    gens.iter()
                        .map(|g| match g {
                            GroupGenerator::Shift(v) => scale(v).map(GroupGenerator::Shift),
                            GroupGenerator::PointReflection(v) => {
                                scale(v).map(GroupGenerator::PointReflection)
                            }
                        })
                        .collect::<Result<_>>()?,
                )
            }
            other => other.clone(),
        };
        build_torus_model_with(self.complex_dim, self.lattice_basis.clone(), resolution, spec)
    }
}

fn build_strides(res: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(res.len());
    let mut acc = 1;
    for &r in res {
        s.push(acc);
        acc *= r;
    }
    s
}

/// Build a flat torus model with a single resolution per axis.
pub fn build_torus_model(
    n: usize,
    lattice_basis: DMatrix<f64>,
    resolution: usize,
    cover: CoverSpec,
) -> Result<ModelManifold> {
    build_torus_model_with(n, lattice_basis, vec![resolution; 2 * n], cover)
}

/// As [`build_torus_model`] with a resolution per real axis.
pub fn build_torus_model_with(
    n: usize,
    lattice_basis: DMatrix<f64>,
    resolution: Vec<usize>,
    cover: CoverSpec,
) -> Result<ModelManifold> {
    if n == 0 {
        return Err(Error::InvalidModel("complex dimension must be ≥ 1".into()));
    }
    let d = 2 * n;
    if lattice_basis.nrows() != d || lattice_basis.ncols() != d || resolution.len() != d {
        return Err(Error::InvalidModel(format!(
            "expected a {d}×{d} basis and {d} resolutions"
        )));
    }
    if let Some(&r) = resolution.iter().find(|&&r| r < 4) {
        return Err(Error::ResolutionTooCoarse(r));
    }
    let det = lattice_basis.determinant();
    if !(det.abs() > 1e-12) || !det.is_finite() {
        return Err(Error::InvalidModel("lattice basis is degenerate".into()));
    }
    let strides = build_strides(&resolution);
    let mut model = ModelManifold {
        complex_dim: n,
        lattice_basis,
        resolution,
        cover: CoverGroup::FreeAbelian(0),
        fundamental_domain: Vec::new(),
        cover_spec: cover.clone(),
        strides,
    };
    let nsites = model.n_sites();
    match cover {
        CoverSpec::FreeAbelian(k) => {
            if k > d {
                return Err(Error::InvalidModel(format!("Z^{k} cannot act on a {d}-torus")));
            }
            model.cover = CoverGroup::FreeAbelian(k);
            model.fundamental_domain = (0..nsites).collect();
        }
        CoverSpec::Trivial => {
            model.cover = CoverGroup::Finite {
                elements: vec![(0..nsites).collect()],
            };
            model.fundamental_domain = (0..nsites).collect();
        }
        CoverSpec::Finite(gens) => {
            let maps: Vec<Vec<usize>> = gens
                .iter()
                .map(|g| generator_map(&model, g))
                .collect::<Result<_>>()?;
            let elements = group_closure(nsites, &maps)?;
            for (e, map) in elements.iter().enumerate().skip(1) {
                if let Some(site) = (0..nsites).find(|&s| map[s] == s) {
                    return Err(Error::NonFreeAction { element: e, site });
                }
            }
            // orbit representatives: minimum index in each orbit
            let mut u = Vec::new();
            for s in 0..nsites {
                if elements.iter().all(|m| m[s] >= s) {
                    u.push(s);
                }
            }
            model.cover = CoverGroup::Finite { elements };
            model.fundamental_domain = u;
        }
    }
    Ok(model)
}

fn generator_map(model: &ModelManifold, g: &GroupGenerator) -> Result<Vec<usize>> {
    let d = model.real_dim();
    let v = match g {
        GroupGenerator::Shift(v) | GroupGenerator::PointReflection(v) => v,
    };
    if v.len() != d {
        return Err(Error::InvalidModel(format!(
            "group generator needs {d} components"
        )));
    }
    Ok((0..model.n_sites())
        .map(|s| {
            let c = model.coords(s);
            let nc: Vec<usize> = c
                .iter()
                .enumerate()
                .map(|(a, &ca)| {
                    let r = model.resolution[a] as i64;
                    let x = match g {
                        GroupGenerator::Shift(_) => ca as i64 + v[a],
                        GroupGenerator::PointReflection(_) => v[a] - ca as i64,
                    };
                    x.rem_euclid(r) as usize
                })
                .collect();
            model.index(&nc)
        })
        .collect())
}

fn compose(a: &[usize], b: &[usize]) -> Vec<usize> {
    // (a ∘ b)(s) = a(b(s))
    b.iter().map(|&s| a[s]).collect()
}

fn group_closure(nsites: usize, gens: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let id: Vec<usize> = (0..nsites).collect();
    let mut elements = vec![id];
    let mut frontier = VecDeque::from([0usize]);
    while let Some(i) = frontier.pop_front() {
        for g in gens {
            let c = compose(g, &elements[i]);
            if !elements.contains(&c) {
                elements.push(c);
                frontier.push_back(elements.len() - 1);
                if elements.len() > nsites {
                    return Err(Error::InvalidModel("group larger than the grid".into()));
                }
            }
        }
    }
    Ok(elements)
}

/// Orthonormal-frame curvature ic(E) per site, plus the rank of F.
#[derive(Clone, Debug)]
pub struct CurvatureField {
    pub values: Vec<DMatrix<C64>>,
    pub twist_rank: usize,
}

impl CurvatureField {
    /// Diagonal entries α_j(site) if the field is diagonal at every site.
    pub fn diagonal(&self, site: usize) -> Option<Vec<f64>> {
        let m = &self.values[site];
        let n = m.nrows();
        for i in 0..n {
            for j in 0..n {
                if i != j && m[(i, j)].norm() > 1e-12 {
                    return None;
                }
            }
        }
        Some((0..n).map(|i| m[(i, i)].re).collect())
    }
}

fn validate_field(model: &ModelManifold, field: &CurvatureField) -> Result<()> {
    let n = model.complex_dim;
    if field.values.len() != model.n_sites() || field.twist_rank == 0 {
        return Err(Error::UnsupportedField(
            "field size or twist rank does not match the model".into(),
        ));
    }
    for (site, m) in field.values.iter().enumerate() {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::UnsupportedField(format!("matrix at site {site} is not {n}×{n}")));
        }
        let defect = (m - m.adjoint()).iter().fold(0.0f64, |a, z| a.max(z.norm()));
        if defect > 1e-12 {
            return Err(Error::NotHermitian { site, defect });
        }
    }
    if let CoverGroup::Finite { elements } = &model.cover {
        for g in elements.iter().skip(1) {
            for s in 0..model.n_sites() {
                if field.values[g[s]] != field.values[s] {
                    return Err(Error::UnsupportedField(
                        "field is not Γ-periodic".into(),
                    ));
                }
            }
        }
    }
    Ok(())
}

pub fn constant_curvature_field(model: &ModelManifold, alpha: &[f64], twist_rank: usize) -> CurvatureField {
    let n = model.complex_dim;
    assert_eq!(alpha.len(), n, "need one eigenvalue per complex dimension");
    let m = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(alpha[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    CurvatureField {
        values: vec![m; model.n_sites()],
        twist_rank: twist_rank.max(1),
    }
}

/// Field given by a function of the site position; checked for Hermiticity and
/// Γ-periodicity.
pub fn curvature_field_from_fn<F>(model: &ModelManifold, twist_rank: usize, f: F) -> Result<CurvatureField>
where
    F: Fn(&[f64]) -> DMatrix<C64>,
{
    let field = CurvatureField {
        values: (0..model.n_sites()).map(|s| f(&model.position(s))).collect(),
        twist_rank,
    };
    validate_field(model, &field)?;
    Ok(field)
}

/// One cosine modulation term a·cos(2π(m_x x + m_y y)/period) of a plane's field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub plane: usize,
    pub amplitude: f64,
    /// Integer wave numbers along the two axes of the plane.
    pub wave: [i64; 2],
}

/// Curvature specification that can be sampled on any model of the family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSpec {
    /// Mean eigenvalue per plane.
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub modulation: Vec<Modulation>,
}

impl CurvatureSpec {
    pub fn constant(alpha: Vec<f64>) -> Self {
        CurvatureSpec {
            alpha,
            modulation: Vec::new(),
        }
    }

    /// Diagonal eigenvalues at a position, for a rectangular lattice with the
    /// given side lengths of the base.
    pub fn alphas_at(&self, pos: &[f64], periods: &[f64]) -> Vec<f64> {
        let mut a = self.alpha.clone();
        for m in &self.modulation {
            let (ax, ay) = (2 * m.plane, 2 * m.plane + 1);
            let phase = 2.0
                * PI
                * (m.wave[0] as f64 * pos[ax] / periods[ax] + m.wave[1] as f64 * pos[ay] / periods[ay]);
            a[m.plane] += m.amplitude * phase.cos();
        }
        a
    }

    /// Sample on a model. Modulation periods are those of the base torus X.
    pub fn sample(&self, model: &ModelManifold, twist_rank: usize) -> Result<CurvatureField> {
        let n = model.complex_dim;
        if self.alpha.len() != n || self.modulation.iter().any(|m| m.plane >= n) {
            return Err(Error::UnsupportedField(format!(
                "curvature spec does not match complex dimension {n}"
            )));
        }
        if self.modulation.is_empty() {
            return Ok(constant_curvature_field(model, &self.alpha, twist_rank));
        }
        let periods = base_periods(model)?;
        curvature_field_from_fn(model, twist_rank, |p| {
            let a = self.alphas_at(p, &periods);
            DMatrix::from_fn(n, n, |i, j| if i == j { C64::new(a[i], 0.0) } else { C64::new(0.0, 0.0) })
        })
    }

    pub fn is_constant(&self) -> bool {
        self.modulation.iter().all(|m| m.amplitude == 0.0)
    }
}

/// Side lengths of the base torus along each axis (rectangular lattices).
pub fn base_periods(model: &ModelManifold) -> Result<Vec<f64>> {
    let h = model.mesh()?;
    let mut p: Vec<f64> = h
        .iter()
        .zip(&model.resolution)
        .map(|(h, &r)| h * r as f64)
        .collect();
    if let CoverGroup::Finite { elements } = &model.cover {
        if elements.len() > 1 {
            // shrink each axis by the translation part of the generators
            for (a, pa) in p.iter_mut().enumerate() {
                let r = model.resolution[a];
                let mut g = r;
                for e in elements {
                    let c = model.coords(e[0]);
                    g = gcd(g, c[a]);
                }
                *pa *= g as f64 / r as f64;
            }
        }
    }
    Ok(p)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// U(1) parallel transport along every grid edge of the model grid.
#[derive(Clone, Debug)]
pub struct BundleLinkData {
    /// phases[site * real_dim + axis]: transport from site to site + e_axis.
    pub phases: Vec<C64>,
    pub power: u32,
    pub real_dim: usize,
}

impl BundleLinkData {
    pub fn link(&self, site: usize, axis: usize) -> C64 {
        self.phases[site * self.real_dim + axis]
    }

    /// Argument of the product of links around the plaquette at `site`
    /// spanned by axes (a, b), counter-clockwise.
    pub fn plaquette_flux(&self, model: &ModelManifold, site: usize, a: usize, b: usize) -> f64 {
        let sa = model.step(site, a, true);
        let sb = model.step(site, b, true);
        let p = self.link(site, a) * self.link(sa, b) * self.link(sb, a).conj() * self.link(site, b).conj();
        p.arg()
    }

    /// Σ plaquette fluxes in plane j over the whole grid, divided by the
    /// number of grid points off the plane.
    pub fn total_flux(&self, model: &ModelManifold, plane: usize) -> f64 {
        let (a, b) = (2 * plane, 2 * plane + 1);
        let others = model.n_sites() / (model.resolution[a] * model.resolution[b]);
        (0..model.n_sites())
            .map(|s| self.plaquette_flux(model, s, a, b))
            .sum::<f64>()
            / others as f64
    }

    /// Apply a site gauge g: U(s,a) ↦ g(s) U(s,a) conj(g(s+e_a)).
    pub fn gauge_transform(&self, model: &ModelManifold, g: &[C64]) -> BundleLinkData {
        let d = self.real_dim;
        let mut out = self.clone();
        for s in 0..model.n_sites() {
            for a in 0..d {
                let t = model.step(s, a, true);
                out.phases[s * d + a] = g[s] * self.link(s, a) * g[t].conj();
            }
        }
        out
    }

    /// Multiply the wrap links along `axis` by e^{−iθ} (Bloch twist).
    pub fn twisted(&self, model: &ModelManifold, theta: &[f64]) -> BundleLinkData {
        let d = self.real_dim;
        let mut out = self.clone();
        for (axis, &th) in theta.iter().enumerate() {
            if th == 0.0 {
                continue;
            }
            let ph = C64::from_polar(1.0, -th);
            for s in 0..model.n_sites() {
                if model.is_wrap(s, axis) {
                    out.phases[s * d + axis] *= ph;
                }
            }
        }
        out
    }
}

/// Landau-gauge links with plaquette flux k·α_j·h_x·h_y in each plane.
///
/// The field must be diagonal, with α_j depending only on the coordinates of
/// plane j, which makes the per-plane connections commute.
pub fn link_phases_from_curvature(model: &ModelManifold, field: &CurvatureField, k: u32) -> Result<BundleLinkData> {
    validate_field(model, field)?;
    let h = model.mesh()?;
    let n = model.complex_dim;
    let d = 2 * n;
    let nsites = model.n_sites();
    let mut alphas = Vec::with_capacity(nsites);
    for s in 0..nsites {
        alphas.push(field.diagonal(s).ok_or_else(|| {
            Error::UnsupportedField("lattice links need a diagonal curvature field".into())
        })?);
    }
    let mut phases = vec![C64::new(1.0, 0.0); nsites * d];
    for j in 0..n {
        let (ax, ay) = (2 * j, 2 * j + 1);
        let (lx, ly) = (model.resolution[ax], model.resolution[ay]);
        let area = h[ax] * h[ay];
        // α_j must not depend on the other planes' coordinates
        let plane_site = |s: usize| {
            let c = model.coords(s);
            c[ax] + lx * c[ay]
        };
        let mut flux = vec![f64::NAN; lx * ly];
        for s in 0..nsites {
            let p = plane_site(s);
            let v = alphas[s][j] * area;
            if flux[p].is_nan() {
                flux[p] = v;
            } else if (flux[p] - v).abs() > 1e-12 * (1.0 + v.abs()) {
                return Err(Error::UnsupportedField(format!(
                    "α_{j} varies with coordinates outside plane {j}"
                )));
            }
        }
        let total: f64 = flux.iter().sum();
        check_integral(j, total, 1.0)?;
        if let CoverGroup::Finite { elements } = &model.cover {
            // the bundle must descend to X: compare with the quotient flux
            let order = elements.len() as f64;
            let per_plane_orbits = plane_orbit_factor(model, elements, ax, ay);
            check_integral(j, total, order / per_plane_orbits)?;
        }
        let kf = k as f64;
        // θ(x,y) = Σ_{x'<x} Φ(x', y) on y-links; row totals fixed on the x-wrap
        let mut theta = vec![0.0; lx * ly];
        let mut row_total = vec![0.0; ly];
        for y in 0..ly {
            let mut acc = 0.0;
            for x in 0..lx {
                theta[x + lx * y] = kf * acc;
                acc += flux[x + lx * y];
            }
            row_total[y] = kf * acc;
        }
        let mut wrap = vec![0.0; ly];
        let mut acc = 0.0;
        for y in 0..ly {
            wrap[y] = -acc;
            acc += row_total[y];
        }
        for s in 0..nsites {
            let c = model.coords(s);
            let (x, y) = (c[ax], c[ay]);
            phases[s * d + ay] = C64::from_polar(1.0, theta[x + lx * y]);
            if x == lx - 1 {
                phases[s * d + ax] = C64::from_polar(1.0, wrap[y]);
            }
        }
    }
    Ok(BundleLinkData {
        phases,
        power: k,
        real_dim: d,
    })
}

fn check_integral(plane: usize, total: f64, divide: f64) -> Result<()> {
    let c = total / (2.0 * PI) / divide;
    if (c - c.round()).abs() > CHERN_TOL {
        return Err(Error::NonIntegralFlux {
            plane,
            flux_over_2pi: c,
        });
    }
    Ok(())
}

/// Number of group elements acting within plane (ax, ay) only, i.e. the
/// factor by which this plane's torus is covered.
fn plane_orbit_factor(model: &ModelManifold, elements: &[Vec<usize>], ax: usize, ay: usize) -> f64 {
    let c0 = model.coords(0);
    elements
        .iter()
        .filter(|e| {
            let c = model.coords(e[0]);
            c.iter()
                .enumerate()
                .all(|(a, &v)| a == ax || a == ay || v == c0[a])
        })
        .count() as f64
}

/// Gauge phases c with (L_γ u)(γs) = c(s) u(s) commuting with the covariant
/// differences. Fails if the link data is not γ-invariant up to gauge.
pub fn magnetic_translation(model: &ModelManifold, links: &BundleLinkData, map: &[usize]) -> Result<Vec<C64>> {
    let nsites = model.n_sites();
    let d = model.real_dim();
    let mut c = vec![C64::new(0.0, 0.0); nsites];
    let mut seen = vec![false; nsites];
    c[0] = C64::new(1.0, 0.0);
    seen[0] = true;
    let mut q = VecDeque::from([0usize]);
    while let Some(s) = q.pop_front() {
        for a in 0..d {
            let t = model.step(s, a, true);
            if !seen[t] {
                c[t] = links.link(map[s], a) * c[s] * links.link(s, a).conj();
                seen[t] = true;
                q.push_back(t);
            }
            let b = model.step(s, a, false);
            if !seen[b] {
                // c(s) = U(γb,a) c(b) conj(U(b,a))
                c[b] = links.link(map[b], a).conj() * c[s] * links.link(b, a);
                seen[b] = true;
                q.push_back(b);
            }
        }
    }
    for s in 0..nsites {
        for a in 0..d {
            let t = model.step(s, a, true);
            let want = links.link(map[s], a) * c[s] * links.link(s, a).conj();
            if (want - c[t]).norm() > 1e-8 {
                return Err(Error::InconsistentLinks(
                    "link data is not invariant under the group up to gauge".into(),
                ));
            }
        }
    }
    Ok(c)
}

/// Apply a magnetic translation to a site function with `per_site` components.
pub fn apply_translation(map: &[usize], phase: &[C64], per_site: usize, u: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); u.len()];
    for (s, (&gs, &p)) in map.iter().zip(phase).enumerate() {
        for c in 0..per_site {
            out[gs * per_site + c] = p * u[s * per_site + c];
        }
    }
    out
}
