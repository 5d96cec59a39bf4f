//! Discrete Dolbeault and magnetic Schrödinger operators, Dirichlet and Bloch
//! restrictions, and the IMS localization identity.
//!
//! ∂̄_j = (D_{x_j} + i D_{y_j})/√2 with covariant forward differences
//! (D_a u)(s) = (conj U(s,a) u(s+e_a) − u(s))/h_a. The square-grid first-order
//! complex has a doubler at momentum (π/2, −π/2); a range-one Wilson term
//! W_j = (w h_x h_y / 2)(|D_y D_x u|² + |D_x D_y u|²) acting on each form
//! component lifts it without touching ∂̄, so ∂̄² = 0 still holds.

use crate::error::{Error, Result};
use crate::geomodel::{
    build_torus_model_with, BundleLinkData, CoverGroup, CoverSpec, ModelManifold,
};
use crate::linalg::eigs::{lowest_eigenpairs, SubspaceOptions};
use crate::linalg::{CsrMatrix, C64};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

pub const DEFAULT_WILSON: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Closed carrier torus: M for finite Γ, a tiled super-torus for Z^d.
    Periodic,
    /// Bloch fibre of a Z^d cover at quasi-momenta θ.
    Bloch(Vec<f64>),
    DirichletU,
    DirichletUs(f64),
}

impl BoundaryCondition {
    pub fn label(&self) -> String {
        match self {
            BoundaryCondition::Periodic => "periodic".into(),
            BoundaryCondition::Bloch(_) => "bloch".into(),
            BoundaryCondition::DirichletU => "dirichlet_u".into(),
            BoundaryCondition::DirichletUs(_) => "dirichlet_us".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LatticeOperator {
    /// One copy of the operator; the full operator is `matrix ⊗ I_multiplicity`.
    pub matrix: CsrMatrix,
    pub multiplicity: usize,
    pub boundary: BoundaryCondition,
    pub scale: f64,
    pub form_degree: usize,
    pub power_k: u32,
    /// Form components per site.
    pub components: usize,
    /// Carrier site of each block of `components` rows.
    pub sites: Vec<usize>,
    pub psd: bool,
}

impl LatticeOperator {
    pub fn dimension(&self) -> usize {
        self.matrix.nrows() * self.multiplicity
    }

    pub fn from_matrix(matrix: CsrMatrix, boundary: BoundaryCondition) -> Self {
        let n = matrix.nrows();
        LatticeOperator {
            matrix,
            multiplicity: 1,
            boundary,
            scale: 1.0,
            form_degree: 0,
            power_k: 1,
            components: 1,
            sites: (0..n).collect(),
            psd: false,
        }
    }

    /// Compression to the rows of the given sites (in the order given).
    pub fn restrict_sites(&self, keep: &[usize], boundary: BoundaryCondition) -> LatticeOperator {
        let c = self.components;
        let mut pos = std::collections::HashMap::new();
        for (i, &s) in self.sites.iter().enumerate() {
            pos.insert(s, i);
        }
        let mut rows = Vec::with_capacity(keep.len() * c);
        let mut sites = Vec::with_capacity(keep.len());
        for s in keep {
            if let Some(&i) = pos.get(s) {
                sites.push(*s);
                rows.extend((0..c).map(|a| i * c + a));
            }
        }
        LatticeOperator {
            matrix: self.matrix.principal(&rows),
            boundary,
            sites,
            ..self.clone()
        }
    }

    /// Sites whose every coupling stays inside `region`.
    pub fn stencil_interior(&self, region: &[usize]) -> Vec<usize> {
        let c = self.components;
        let mut inside = std::collections::HashSet::new();
        inside.extend(region.iter().copied());
        let mut out = Vec::new();
        for (i, &s) in self.sites.iter().enumerate() {
            if !inside.contains(&s) {
                continue;
            }
            let ok = (0..c).all(|a| {
                let (cols, _) = self.matrix.row(i * c + a);
                cols.iter().all(|&j| inside.contains(&self.sites[j / c]))
            });
            if ok {
                out.push(s);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssemblyOptions {
    pub wilson: f64,
    /// Copies of X per cover axis in the Z^d carrier (odd, ≥ 3).
    pub carrier_tiles: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            wilson: DEFAULT_WILSON,
            carrier_tiles: 3,
        }
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Bitmasks of the q-subsets of {0..n-1}, ascending.
pub fn form_components(n: usize, q: usize) -> Vec<u32> {
    (0u32..(1u32 << n))
        .filter(|m| m.count_ones() as usize == q)
        .collect()
}

/// Geometry on which Periodic, Dirichlet and IMS computations live.
#[derive(Clone, Debug)]
pub struct Carrier {
    pub grid: ModelManifold,
    /// Sites of each translate γU; entry 0 is U itself.
    pub translates: Vec<Vec<usize>>,
    pub tiles: usize,
    /// Carrier site → model site.
    pub to_model: Vec<usize>,
}

pub fn build_carrier(model: &ModelManifold, tiles: usize) -> Result<Carrier> {
    match &model.cover {
        CoverGroup::Finite { elements } => {
            let translates = elements
                .iter()
                .map(|g| model.fundamental_domain.iter().map(|&u| g[u]).collect())
                .collect();
            Ok(Carrier {
                grid: model.clone(),
                translates,
                tiles: 1,
                to_model: (0..model.n_sites()).collect(),
            })
        }
        CoverGroup::FreeAbelian(d) => {
            let d = *d;
            let tiles = tiles.max(1);
            let dim = model.real_dim();
            let mut basis = model.lattice_basis.clone();
            let mut res = model.resolution.clone();
            for a in 0..d {
                for i in 0..dim {
                    basis[(i, a)] *= tiles as f64;
                }
                res[a] *= tiles;
            }
            let grid = build_torus_model_with(model.complex_dim, basis, res, CoverSpec::Trivial)?;
            let n = grid.n_sites();
            let mut to_model = Vec::with_capacity(n);
            let mut cell_of = Vec::with_capacity(n);
            for s in 0..n {
                let c = grid.coords(s);
                let mc: Vec<usize> = c
                    .iter()
                    .enumerate()
                    .map(|(a, &x)| x % model.resolution[a])
                    .collect();
                to_model.push(model.index(&mc));
                let mut cell = 0;
                for a in (0..d).rev() {
                    cell = cell * tiles + c[a] / model.resolution[a];
                }
                cell_of.push(cell);
            }
            let ncells = tiles.pow(d as u32);
            let mut translates = vec![Vec::new(); ncells];
            for (s, &c) in cell_of.iter().enumerate() {
                translates[c].push(s);
            }
            Ok(Carrier {
                grid,
                translates,
                tiles,
                to_model,
            })
        }
    }
}

/// Pull link data back to the carrier grid.
pub fn carrier_links(carrier: &Carrier, links: &BundleLinkData) -> BundleLinkData {
    let d = links.real_dim;
    let mut phases = Vec::with_capacity(carrier.grid.n_sites() * d);
    for &m in &carrier.to_model {
        for a in 0..d {
            phases.push(links.link(m, a));
        }
    }
    BundleLinkData {
        phases,
        power: links.power,
        real_dim: d,
    }
}

fn check_links(grid: &ModelManifold, links: &BundleLinkData) -> Result<()> {
    if links.real_dim != grid.real_dim() || links.phases.len() != grid.n_sites() * links.real_dim {
        return Err(Error::InconsistentLinks(format!(
            "{} link phases for {} sites in {} dimensions",
            links.phases.len(),
            grid.n_sites(),
            grid.real_dim()
        )));
    }
    if links.power == 0 {
        return Err(Error::InconsistentLinks("power k must be ≥ 1".into()));
    }
    if links.phases.iter().any(|p| (p.norm() - 1.0).abs() > 1e-12) {
        return Err(Error::InconsistentLinks("link phases must have unit modulus".into()));
    }
    Ok(())
}

/// Scalar covariant forward difference along `axis`.
pub fn covariant_difference(grid: &ModelManifold, links: &BundleLinkData, axis: usize) -> Result<CsrMatrix> {
    let h = grid.mesh()?[axis];
    let n = grid.n_sites();
    let mut t = Vec::with_capacity(2 * n);
    for s in 0..n {
        let nb = grid.step(s, axis, true);
        t.push((s, nb, links.link(s, axis).conj() / h));
        t.push((s, s, C64::new(-1.0 / h, 0.0)));
    }
    Ok(CsrMatrix::from_triplets(n, n, t))
}

fn plane_dbar(dx: &CsrMatrix, dy: &CsrMatrix) -> CsrMatrix {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let t: Vec<_> = dx
        .triplets()
        .map(|(i, j, v)| (i, j, v * r))
        .chain(dy.triplets().map(|(i, j, v)| (i, j, v * C64::new(0.0, r))))
        .collect();
    CsrMatrix::from_triplets(dx.nrows(), dx.ncols(), t)
}

struct PlaneOps {
    dbar: Vec<CsrMatrix>,
    wilson: CsrMatrix,
}

fn plane_ops(grid: &ModelManifold, links: &BundleLinkData, w: f64) -> Result<PlaneOps> {
    check_links(grid, links)?;
    let h = grid.mesh()?;
    let n = grid.complex_dim;
    let ns = grid.n_sites();
    let mut dbar = Vec::with_capacity(n);
    let mut wilson = CsrMatrix::zeros(ns, ns);
    for j in 0..n {
        let dx = covariant_difference(grid, links, 2 * j)?;
        let dy = covariant_difference(grid, links, 2 * j + 1)?;
        if w != 0.0 {
            let a = dy.matmul(&dx);
            let b = dx.matmul(&dy);
            let ww = a.adjoint().matmul(&a).add(&b.adjoint().matmul(&b));
            wilson = wilson.add_scaled(1.0, &ww, 0.5 * w * h[2 * j] * h[2 * j + 1]);
        }
        dbar.push(plane_dbar(&dx, &dy));
    }
    Ok(PlaneOps { dbar, wilson })
}

fn dbar_from_planes(ops: &PlaneOps, n: usize, ns: usize, q: usize) -> CsrMatrix {
    let src = form_components(n, q);
    let dst = form_components(n, q + 1);
    let (cs, cd) = (src.len(), dst.len());
    let mut t = Vec::new();
    for (ci, &mask) in src.iter().enumerate() {
        for j in 0..n {
            if mask & (1 << j) != 0 {
                continue;
            }
            let target = mask | (1 << j);
            let co = dst.binary_search(&target).unwrap();
            let below = (mask & ((1 << j) - 1)).count_ones();
            let sign = if below % 2 == 0 { 1.0 } else { -1.0 };
            for (r, c, v) in ops.dbar[j].triplets() {
                t.push((r * cd + co, c * cs + ci, v * sign));
            }
        }
    }
    CsrMatrix::from_triplets(ns * cd, ns * cs, t)
}

/// The discrete ∂̄ from (0,q)- to (0,q+1)-forms on the grid.
pub fn dbar_matrix(grid: &ModelManifold, links: &BundleLinkData, q: usize) -> Result<CsrMatrix> {
    let ops = plane_ops(grid, links, 0.0)?;
    Ok(dbar_from_planes(&ops, grid.complex_dim, grid.n_sites(), q))
}

/// Unscaled Δ''_q + W on a closed grid.
pub fn dolbeault_matrix(grid: &ModelManifold, links: &BundleLinkData, q: usize, wilson: f64) -> Result<CsrMatrix> {
    let n = grid.complex_dim;
    let ns = grid.n_sites();
    let comps = binomial(n, q);
    let ops = plane_ops(grid, links, wilson)?;
    let mut lap = CsrMatrix::zeros(ns * comps, ns * comps);
    if q < n {
        let d = dbar_from_planes(&ops, n, ns, q);
        lap = lap.add(&d.adjoint().matmul(&d));
    }
    if q > 0 {
        let d = dbar_from_planes(&ops, n, ns, q - 1);
        lap = lap.add(&d.matmul(&d.adjoint()));
    }
    if wilson != 0.0 {
        lap = lap.add(&ops.wilson.kron_identity(comps));
    }
    Ok(lap)
}

/// (1/k)Δ''_{k,q} under the requested boundary condition.
pub fn assemble_dolbeault(
    model: &ModelManifold,
    links: &BundleLinkData,
    q: usize,
    bc: &BoundaryCondition,
    twist_rank: usize,
) -> Result<LatticeOperator> {
    assemble_dolbeault_with(model, links, q, bc, twist_rank, &AssemblyOptions::default())
}

pub fn assemble_dolbeault_with(
    model: &ModelManifold,
    links: &BundleLinkData,
    q: usize,
    bc: &BoundaryCondition,
    twist_rank: usize,
    opts: &AssemblyOptions,
) -> Result<LatticeOperator> {
    check_links(model, links)?;
    let n = model.complex_dim;
    let k = links.power;
    let scale = 1.0 / k as f64;
    let base = |grid: &ModelManifold, l: &BundleLinkData, b: BoundaryCondition| -> Result<LatticeOperator> {
        let comps = binomial(n, q);
        let matrix = if q > n {
            CsrMatrix::zeros(0, 0)
        } else {
            dolbeault_matrix(grid, l, q, opts.wilson)?.scale(scale)
        };
        Ok(LatticeOperator {
            matrix,
            multiplicity: twist_rank.max(1),
            boundary: b,
            scale,
            form_degree: q,
            power_k: k,
            components: comps,
            sites: if q > n { Vec::new() } else { (0..grid.n_sites()).collect() },
            psd: true,
        })
    };
    match bc {
        BoundaryCondition::Bloch(theta) => {
            let d = match model.cover {
                CoverGroup::FreeAbelian(d) => d,
                _ => {
                    return Err(Error::InconsistentLinks(
                        "Bloch conditions need a Z^d cover".into(),
                    ))
                }
            };
            if theta.len() != d {
                return Err(Error::InconsistentLinks(format!(
                    "expected {d} quasi-momenta, got {}",
                    theta.len()
                )));
            }
            base(model, &links.twisted(model, theta), bc.clone())
        }
        BoundaryCondition::Periodic => {
            let c = build_carrier(model, opts.carrier_tiles)?;
            base(&c.grid, &carrier_links(&c, links), bc.clone())
        }
        BoundaryCondition::DirichletU => {
            let c = build_carrier(model, opts.carrier_tiles.max(3))?;
            let full = base(&c.grid, &carrier_links(&c, links), BoundaryCondition::Periodic)?;
            let keep = full.stencil_interior(&c.translates[0]);
            Ok(full.restrict_sites(&keep, bc.clone()))
        }
        BoundaryCondition::DirichletUs(s) => {
            let tiles = carrier_tiles_for(model, *s).max(opts.carrier_tiles);
            let c = build_carrier(model, tiles)?;
            let full = base(&c.grid, &carrier_links(&c, links), BoundaryCondition::Periodic)?;
            let dist = distance_to(&c.grid, &c.translates[0]);
            let keep: Vec<usize> = (0..c.grid.n_sites()).filter(|&x| dist[x] < *s).collect();
            Ok(full.restrict_sites(&keep, bc.clone()))
        }
    }
}

/// Tiles per cover axis so that the s-neighbourhood of U does not wrap.
pub fn carrier_tiles_for(model: &ModelManifold, s: f64) -> usize {
    match model.cover {
        CoverGroup::Finite { .. } => 1,
        CoverGroup::FreeAbelian(d) => {
            let mut t = 3;
            if let Ok(h) = model.mesh() {
                for a in 0..d {
                    let period = h[a] * model.resolution[a] as f64;
                    let need = 2 * (s / period).ceil() as usize + 1;
                    t = t.max(need);
                }
            }
            t
        }
    }
}

/// Minimal-image distance between two sites of a rectangular grid.
pub fn site_distance(grid: &ModelManifold, h: &[f64], a: usize, b: usize) -> f64 {
    let ca = grid.coords(a);
    let cb = grid.coords(b);
    let mut d2 = 0.0;
    for ax in 0..ca.len() {
        let r = grid.resolution[ax];
        let diff = ca[ax].abs_diff(cb[ax]);
        let m = diff.min(r - diff) as f64 * h[ax];
        d2 += m * m;
    }
    d2.sqrt()
}

/// Distance from every site to the site set `region` (0 inside).
pub fn distance_to(grid: &ModelManifold, region: &[usize]) -> Vec<f64> {
    let h = grid.mesh().unwrap_or_else(|_| vec![grid.mesh_h(); grid.real_dim()]);
    let n = grid.n_sites();
    let mut inside = vec![false; n];
    for &s in region {
        inside[s] = true;
    }
    let boundary: Vec<usize> = region
        .iter()
        .copied()
        .filter(|&s| {
            (0..grid.real_dim()).any(|a| !inside[grid.step(s, a, true)] || !inside[grid.step(s, a, false)])
        })
        .collect();
    crate::par::map_range(n, |x| {
        if inside[x] {
            0.0
        } else {
            boundary
                .iter()
                .map(|&b| site_distance(grid, &h, x, b))
                .fold(f64::INFINITY, f64::min)
        }
    })
}

/// (1/k)Σ_a D_aᴴD_a ⊗ I_r − V on the model grid.
pub fn assemble_schrodinger(
    model: &ModelManifold,
    links: &BundleLinkData,
    potential: &[DMatrix<C64>],
    k: u32,
) -> Result<LatticeOperator> {
    check_links(model, links)?;
    let ns = model.n_sites();
    if potential.len() != ns {
        return Err(Error::InconsistentLinks("one potential matrix per site required".into()));
    }
    let r = potential.first().map_or(1, |m| m.nrows());
    for (site, v) in potential.iter().enumerate() {
        if v.nrows() != r || v.ncols() != r {
            return Err(Error::NonHermitianPotential { site });
        }
        let defect = (v - v.adjoint()).iter().fold(0.0f64, |a, z| a.max(z.norm()));
        if defect > 1e-12 * (1.0 + v.norm()) {
            return Err(Error::NonHermitianPotential { site });
        }
    }
    let kk = k.max(1) as f64;
    let mut lap = CsrMatrix::zeros(ns, ns);
    for a in 0..model.real_dim() {
        let d = covariant_difference(model, links, a)?;
        lap = lap.add(&d.adjoint().matmul(&d));
    }
    let lap = lap.scale(1.0 / kk).kron_identity(r);
    let mut t: Vec<_> = lap.triplets().collect();
    for (s, v) in potential.iter().enumerate() {
        for i in 0..r {
            for j in 0..r {
                if v[(i, j)] != C64::new(0.0, 0.0) {
                    t.push((s * r + i, s * r + j, -v[(i, j)]));
                }
            }
        }
    }
    Ok(LatticeOperator {
        matrix: CsrMatrix::from_triplets(ns * r, ns * r, t),
        multiplicity: 1,
        boundary: BoundaryCondition::Periodic,
        scale: 1.0 / kk,
        form_degree: 0,
        power_k: k,
        components: r,
        sites: (0..ns).collect(),
        psd: false,
    })
}

/// Quintic smoothstep 6t⁵ − 15t⁴ + 10t³ on [0, 1].
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

#[derive(Clone, Debug)]
pub struct CutoffPartition {
    pub s: f64,
    pub profile: String,
    pub carrier: Carrier,
    /// Unnormalised bumps φ_γ on carrier sites.
    pub bumps: Vec<Vec<f64>>,
    /// J_γ = φ_γ / (Σ φ²)^{1/2}.
    pub cutoffs: Vec<Vec<f64>>,
    /// Distance of each site to each translate.
    pub distances: Vec<Vec<f64>>,
}

impl CutoffPartition {
    /// max_x |Σ_γ J_γ(x)² − 1|.
    pub fn partition_defect(&self) -> f64 {
        let n = self.carrier.grid.n_sites();
        (0..n)
            .map(|x| (self.cutoffs.iter().map(|j| j[x] * j[x]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Quadratic partition of unity subordinate to the s-neighbourhoods of the translates γU.
pub fn ims_partition(model: &ModelManifold, s: f64) -> Result<CutoffPartition> {
    let h = model.mesh_h();
    if !(s >= 2.0 * h) {
        return Err(Error::WidthTooSmall { s, h });
    }
    let carrier = build_carrier(model, carrier_tiles_for(model, s))?;
    let distances: Vec<Vec<f64>> = carrier
        .translates
        .iter()
        .map(|t| distance_to(&carrier.grid, t))
        .collect();
    let bumps: Vec<Vec<f64>> = distances
        .iter()
        .map(|d| d.iter().map(|&x| 1.0 - smoothstep(x / s)).collect())
        .collect();
    let n = carrier.grid.n_sites();
    let norm: Vec<f64> = (0..n)
        .map(|x| bumps.iter().map(|b| b[x] * b[x]).sum::<f64>().sqrt())
        .collect();
    let cutoffs = bumps
        .iter()
        .map(|b| b.iter().zip(&norm).map(|(v, z)| v / z).collect())
        .collect();
    Ok(CutoffPartition {
        s,
        profile: "quintic_smoothstep".into(),
        carrier,
        bumps,
        cutoffs,
        distances,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImsDefect {
    pub c: f64,
    pub mu_min: f64,
    /// max |H − Σ J H J − S| over entries.
    pub identity_residual: f64,
    pub s: f64,
}

/// S with S_xy = ½ H_xy Σ_γ (J_γ(x) − J_γ(y))², so that H = Σ J H J + S.
pub fn localization_error(h: &LatticeOperator, partition: &CutoffPartition) -> Result<CsrMatrix> {
    check_partition(h, partition)?;
    let c = h.components;
    let t: Vec<_> = h
        .matrix
        .triplets()
        .map(|(i, j, v)| {
            let (x, y) = (h.sites[i / c], h.sites[j / c]);
            let g: f64 = partition
                .cutoffs
                .iter()
                .map(|jj| (jj[x] - jj[y]).powi(2))
                .sum();
            (i, j, v * (0.5 * g))
        })
        .collect();
    Ok(CsrMatrix::from_triplets(h.matrix.nrows(), h.matrix.ncols(), t))
}

/// Σ_γ J_γ H J_γ.
pub fn localized_sum(h: &LatticeOperator, partition: &CutoffPartition) -> Result<CsrMatrix> {
    check_partition(h, partition)?;
    let c = h.components;
    let t: Vec<_> = h
        .matrix
        .triplets()
        .map(|(i, j, v)| {
            let (x, y) = (h.sites[i / c], h.sites[j / c]);
            let g: f64 = partition.cutoffs.iter().map(|jj| jj[x] * jj[y]).sum();
            (i, j, v * g)
        })
        .collect();
    Ok(CsrMatrix::from_triplets(h.matrix.nrows(), h.matrix.ncols(), t))
}

fn check_partition(h: &LatticeOperator, p: &CutoffPartition) -> Result<()> {
    let n = p.carrier.grid.n_sites();
    if h.sites.iter().any(|&s| s >= n) || h.sites.len() != n {
        return Err(Error::InconsistentLinks(
            "operator does not live on the partition's carrier".into(),
        ));
    }
    Ok(())
}

/// Bottom of spec(S). Rows of S vanish where every cutoff is locally
/// constant and only contribute zeros, so the solve runs on the support. On
/// symmetric carriers the bottom is a near-degenerate cluster; the block is
/// widened until it converges.
fn smallest_eigenvalue(s_mat: &CsrMatrix) -> Result<f64> {
    let support: Vec<usize> = (0..s_mat.nrows())
        .filter(|&i| s_mat.row(i).1.iter().any(|v| v.norm() > 0.0))
        .collect();
    let floor = if support.len() < s_mat.nrows() { 0.0 } else { f64::INFINITY };
    if support.is_empty() {
        return Ok(0.0);
    }
    let sub = s_mat.principal(&support);
    let mut last = String::new();
    for m in [1, 8, 24] {
        let opts = SubspaceOptions {
            seed: 17,
            ..Default::default()
        };
        match lowest_eigenpairs(&sub, m.min(sub.nrows()), &opts) {
            Ok(p) => return Ok(p.values[0].min(floor)),
            Err(e) => last = e,
        }
    }
    Err(Error::NoConvergence(last))
}

/// C = −μ_min(H − Σ J H J)·√k, with the residual of the localisation identity.
pub fn ims_defect_bound(h: &LatticeOperator, partition: &CutoffPartition, k: u32) -> Result<ImsDefect> {
    let s_mat = localization_error(h, partition)?;
    let loc = localized_sum(h, partition)?;
    let resid = h.matrix.add_scaled(1.0, &loc.add(&s_mat), -1.0);
    let identity_residual = resid.max_abs();
    let mu_min = if s_mat.nnz() == 0 {
        0.0
    } else {
        smallest_eigenvalue(&s_mat)?
    };
    let c = if mu_min < 0.0 { -mu_min * (k as f64).sqrt() } else { 0.0 };
    Ok(ImsDefect {
        c,
        mu_min,
        identity_residual,
        s: partition.s,
    })
}

/// Write the operator as `row col re im` lines after a `%` header.
pub fn write_triplets<W: Write>(op: &LatticeOperator, mut w: W) -> std::io::Result<()> {
    let n = op.matrix.nrows();
    writeln!(w, "% covmorse sparse triplets: row col re im (0-based)")?;
    writeln!(
        w,
        "% boundary={} q={} k={} scale={:e} multiplicity={}",
        op.boundary.label(),
        op.form_degree,
        op.power_k,
        op.scale,
        op.multiplicity
    )?;
    writeln!(w, "{} {} {}", n, n, op.matrix.nnz())?;
    for (i, j, v) in op.matrix.triplets() {
        writeln!(w, "{} {} {:.17e} {:.17e}", i, j, v.re, v.im)?;
    }
    Ok(())
}

pub fn read_triplets<R: BufRead>(r: R) -> Result<CsrMatrix> {
    let mut dims: Option<(usize, usize)> = None;
    let mut t = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Io(format!("malformed triplet line: {line}"));
        if dims.is_none() {
            if f.len() != 3 {
                return Err(bad());
            }
            dims = Some((f[0].parse().map_err(|_| bad())?, f[1].parse().map_err(|_| bad())?));
            continue;
        }
        if f.len() != 4 {
            return Err(bad());
        }
        t.push((
            f[0].parse().map_err(|_| bad())?,
            f[1].parse().map_err(|_| bad())?,
            C64::new(f[2].parse().map_err(|_| bad())?, f[3].parse().map_err(|_| bad())?),
        ));
    }
    let (nr, nc) = dims.ok_or_else(|| Error::Io("missing size line".into()))?;
    Ok(CsrMatrix::from_triplets(nr, nc, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomodel::{build_torus_model, constant_curvature_field, link_phases_from_curvature};
    use crate::linalg::eigs::dense_eigenvalues;
    use std::f64::consts::PI;

    fn elliptic(l: usize, d: f64, k: u32) -> (ModelManifold, BundleLinkData) {
        let m = build_torus_model(1, DMatrix::identity(2, 2), l, CoverSpec::Trivial).unwrap();
        let f = constant_curvature_field(&m, &[2.0 * PI * d], 1);
        let links = link_phases_from_curvature(&m, &f, k).unwrap();
        (m, links)
    }

    #[test]
    fn flat_laplacian_has_constant_kernel() {
        let (m, l) = elliptic(8, 0.0, 1);
        let op = assemble_dolbeault(&m, &l, 0, &BoundaryCondition::Periodic, 1).unwrap();
        let ones = vec![C64::new(1.0, 0.0); 64];
        let r = op.matrix.mul_vec(&ones);
        assert!(r.iter().all(|z| z.norm() < 1e-12));
        let ev = dense_eigenvalues(&op.matrix.to_dense());
        assert!(ev[0].abs() < 1e-10 && ev[1] > 1.0);
    }

    #[test]
    fn degree_one_has_single_low_mode() {
        let (m, l) = elliptic(16, 1.0, 1);
        let op = assemble_dolbeault(&m, &l, 0, &BoundaryCondition::Periodic, 1).unwrap();
        let ev = dense_eigenvalues(&op.matrix.to_dense());
        assert!(ev[0] < 0.1 * ev[1], "{:?}", &ev[..3]);
        let op1 = assemble_dolbeault(&m, &l, 1, &BoundaryCondition::Periodic, 1).unwrap();
        let ev1 = dense_eigenvalues(&op1.matrix.to_dense());
        assert!(ev1[0] > 0.5 * ev[1]);
    }

    #[test]
    fn hermitian_and_adjoint() {
        let (m, l) = elliptic(8, 2.0, 3);
        let op = assemble_dolbeault(&m, &l, 0, &BoundaryCondition::Periodic, 1).unwrap();
        assert_eq!(op.matrix.hermitian_defect(), 0.0);
        let d = dbar_matrix(&m, &l, 0).unwrap();
        let da = d.adjoint();
        for (i, j, v) in d.triplets() {
            assert_eq!(da.get(j, i), v.conj());
        }
    }

    #[test]
    fn triplet_round_trip() {
        let (m, l) = elliptic(6, 1.0, 1);
        let op = assemble_dolbeault(&m, &l, 0, &BoundaryCondition::Periodic, 1).unwrap();
        let mut buf = Vec::new();
        write_triplets(&op, &mut buf).unwrap();
        let back = read_triplets(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, op.matrix);
    }

    #[test]
    fn partition_guards() {
        let (m, _) = elliptic(8, 0.0, 1);
        assert!(matches!(ims_partition(&m, 0.1), Err(Error::WidthTooSmall { .. })));
        let p = ims_partition(&m, 0.5).unwrap();
        assert_eq!(p.cutoffs.len(), 1);
        assert!(p.cutoffs[0].iter().all(|&j| (j - 1.0).abs() < 1e-15));
    }
}
