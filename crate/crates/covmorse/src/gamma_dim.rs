//! Γ-dimensions, Γ-counting functions and the comparison theorems between
//! Γ-periodic operators and their Dirichlet restrictions.
//!
//! Finite groups are handled on the cover itself: dim_Γ L = dim L / |Γ|.
//! Free abelian groups go through the Bloch–Floquet fibres H(θ) and a
//! quadrature over the dual torus.

use crate::error::{Error, Result};
use crate::geomodel::{apply_translation, magnetic_translation, BundleLinkData, CoverGroup, CurvatureField, ModelManifold};
use crate::lattice_op::{
    assemble_dolbeault_with, build_carrier, carrier_links, dolbeault_matrix, ims_defect_bound, ims_partition,
    AssemblyOptions, BoundaryCondition, ImsDefect, LatticeOperator,
};
use crate::linalg::eigs::{dense_eigenvalues, dense_eigh};
use crate::linalg::{CsrMatrix, C64};
use crate::spectral_count::{count_below, count_below_matrix};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const PROJECTION_TOL: f64 = 1e-10;
pub const RANK_REL: f64 = 1e-8;
/// Largest uncertified quadrature weight tolerated in a Bloch count.
pub const EDGE_WEIGHT: f64 = 0.01;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0f64, |a, z| a.max(z.norm()))
}

/// Numerical rank with singular values below RANK_REL·σ_max dropped.
pub fn numerical_rank(m: &DMatrix<C64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_REL * top).count()
}

/// Orthonormal basis of the range of a Hermitian projection.
fn range_basis(p: &DMatrix<C64>) -> DMatrix<C64> {
    let (vals, vecs) = dense_eigh(p);
    let cols: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.5).collect();
    DMatrix::from_fn(p.nrows(), cols.len(), |i, j| vecs[(i, cols[j])])
}

/// Orthonormalise columns, dropping numerically dependent ones.
fn orthonormal_columns(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    let mut out: Vec<nalgebra::DVector<C64>> = Vec::new();
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    for j in 0..a.ncols() {
        let mut v = a.column(j).into_owned();
        for _ in 0..2 {
            for u in &out {
                let c = u.dotc(&v);
                v -= u * c;
            }
        }
        let nv = v.norm();
        if nv > 1e-10 * scale {
            out.push(v / C64::new(nv, 0.0));
        }
    }
    DMatrix::from_fn(n, out.len(), |i, j| out[j][i])
}

fn projector_onto(basis: &DMatrix<C64>) -> DMatrix<C64> {
    let q = orthonormal_columns(basis);
    &q * q.adjoint()
}

#[derive(Clone, Debug)]
pub enum GammaModuleRep {
    /// Projection on the cover of a finite Γ, with the matrices of every group element.
    FiniteGroup {
        projection: DMatrix<C64>,
        action: Vec<DMatrix<C64>>,
        /// Coordinates belonging to the fundamental domain.
        fundamental: Vec<usize>,
    },
    /// Fibre projections P(θ) on a quadrature grid over the dual torus.
    BlochFamily {
        thetas: Vec<Vec<f64>>,
        weights: Vec<f64>,
        projections: Vec<DMatrix<C64>>,
    },
}

impl GammaModuleRep {
    pub fn fiber_dim(&self) -> usize {
        match self {
            GammaModuleRep::FiniteGroup { fundamental, .. } => fundamental.len(),
            GammaModuleRep::BlochFamily { projections, .. } => projections.first().map_or(0, |p| p.nrows()),
        }
    }

    fn validate(&self) -> Result<()> {
        let check_proj = |p: &DMatrix<C64>| -> Result<()> {
            if !p.is_square() {
                return Err(Error::NotAProjection("projection is not square".into()));
            }
            let herm = max_abs(&(p - p.adjoint()));
            let idem = max_abs(&(p * p - p));
            if herm > PROJECTION_TOL || idem > PROJECTION_TOL {
                return Err(Error::NotAProjection(format!(
                    "hermitian defect {herm:e}, idempotence defect {idem:e}"
                )));
            }
            Ok(())
        };
        match self {
            GammaModuleRep::FiniteGroup { projection, action, .. } => {
                check_proj(projection)?;
                for g in action {
                    let c = max_abs(&(g * projection - projection * g));
                    if c > PROJECTION_TOL {
                        return Err(Error::NotAProjection(format!(
                            "projection does not commute with the group (defect {c:e})"
                        )));
                    }
                }
                Ok(())
            }
            GammaModuleRep::BlochFamily {
                thetas,
                weights,
                projections,
            } => {
                if thetas.len() != weights.len() || weights.len() != projections.len() {
                    return Err(Error::NotAProjection("grid and projections differ in length".into()));
                }
                projections.iter().try_for_each(check_proj)
            }
        }
    }
}

/// dim_Γ of a Γ-module.
pub fn gamma_dim(module: &GammaModuleRep) -> Result<f64> {
    module.validate()?;
    Ok(match module {
        GammaModuleRep::FiniteGroup {
            projection, fundamental, ..
        } => fundamental.iter().map(|&i| projection[(i, i)].re).sum(),
        GammaModuleRep::BlochFamily {
            weights, projections, ..
        } => {
            let total: f64 = weights.iter().sum();
            weights
                .iter()
                .zip(projections)
                .map(|(w, p)| w * p.trace().re)
                .sum::<f64>()
                / total
        }
    })
}

/// Bloch–Floquet fibres of a Z^d-periodic operator.
pub trait FiberFamily: Send + Sync {
    fn torus_dim(&self) -> usize;
    fn fiber(&self, theta: &[f64]) -> Result<CsrMatrix>;
    fn multiplicity(&self) -> usize {
        1
    }
    /// Hard-wall restriction to one fundamental cell; `sites` index fibre sites.
    fn dirichlet(&self) -> Result<LatticeOperator>;
}

/// H(θ) = Σ_v T_v e^{iθ·v} for a cell of `cell` sites with hoppings T_v.
#[derive(Clone, Debug)]
pub struct HoppingFamily {
    pub cell: usize,
    pub blocks: Vec<(Vec<i64>, DMatrix<C64>)>,
}

impl HoppingFamily {
    pub fn new(cell: usize, blocks: Vec<(Vec<i64>, DMatrix<C64>)>) -> Result<Self> {
        let d = blocks.first().map_or(0, |b| b.0.len());
        for (v, t) in &blocks {
            if v.len() != d || t.nrows() != cell || t.ncols() != cell {
                return Err(Error::InvalidModel("hopping block has the wrong shape".into()));
            }
            let neg: Vec<i64> = v.iter().map(|x| -x).collect();
            let partner = blocks
                .iter()
                .find(|(w, _)| *w == neg)
                .ok_or_else(|| Error::NotHermitian { site: 0, defect: f64::INFINITY })?;
            let defect = max_abs(&(&partner.1 - t.adjoint()));
            if defect > 1e-12 {
                return Err(Error::NotHermitian { site: 0, defect });
            }
        }
        Ok(HoppingFamily { cell, blocks })
    }

    /// Nearest-neighbour chain Laplacian 2 − shift − shift⁻¹ with `cell` sites per period.
    pub fn chain_laplacian(cell: usize) -> Self {
        let c = |x: f64| C64::new(x, 0.0);
        let mut t0 = DMatrix::from_element(cell, cell, zero());
        let mut tp = DMatrix::from_element(cell, cell, zero());
        for i in 0..cell {
            t0[(i, i)] = c(2.0);
            if i + 1 < cell {
                t0[(i, i + 1)] = c(-1.0);
                t0[(i + 1, i)] = c(-1.0);
            }
        }
        // last site of cell n couples to the first site of cell n+1
        tp[(cell - 1, 0)] = c(-1.0);
        let tm = tp.adjoint();
        if cell == 1 {
            t0[(0, 0)] = c(2.0);
        }
        HoppingFamily {
            cell,
            blocks: vec![(vec![0], t0), (vec![1], tm), (vec![-1], tp)],
        }
    }

    fn block(&self, v: &[i64]) -> Option<&DMatrix<C64>> {
        self.blocks.iter().find(|(w, _)| w == v).map(|(_, t)| t)
    }
}

impl FiberFamily for HoppingFamily {
    fn torus_dim(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.0.len())
    }

    fn fiber(&self, theta: &[f64]) -> Result<CsrMatrix> {
        let mut h = DMatrix::from_element(self.cell, self.cell, zero());
        for (v, t) in &self.blocks {
            let ph: f64 = v.iter().zip(theta).map(|(a, b)| *a as f64 * b).sum();
            h += t * C64::from_polar(1.0, ph);
        }
        Ok(CsrMatrix::from_dense(&h))
    }

    fn dirichlet(&self) -> Result<LatticeOperator> {
        let d = self.torus_dim();
        let zero_v = vec![0i64; d];
        let coupled_out: Vec<bool> = (0..self.cell)
            .map(|i| {
                self.blocks
                    .iter()
                    .filter(|(v, _)| *v != zero_v)
                    .any(|(_, t)| (0..self.cell).any(|j| t[(i, j)] != zero()))
            })
            .collect();
        // sites whose whole stencil stays inside the cell
        let keep: Vec<usize> = (0..self.cell).filter(|&i| !coupled_out[i]).collect();
        let t0 = self.block(&zero_v).cloned().unwrap_or_else(|| DMatrix::from_element(self.cell, self.cell, zero()));
        let op = LatticeOperator::from_matrix(CsrMatrix::from_dense(&t0), BoundaryCondition::Periodic);
        Ok(op.restrict_sites(&keep, BoundaryCondition::DirichletU))
    }
}

/// Bloch fibres of the scaled Dolbeault Laplacian on a Z^d-covered model.
#[derive(Clone, Debug)]
pub struct DolbeaultBloch {
    pub model: ModelManifold,
    pub links: BundleLinkData,
    pub q: usize,
    pub twist_rank: usize,
    pub assembly: AssemblyOptions,
}

impl FiberFamily for DolbeaultBloch {
    fn torus_dim(&self) -> usize {
        match self.model.cover {
            CoverGroup::FreeAbelian(d) => d,
            _ => 0,
        }
    }

    fn fiber(&self, theta: &[f64]) -> Result<CsrMatrix> {
        let bc = BoundaryCondition::Bloch(theta.to_vec());
        Ok(assemble_dolbeault_with(&self.model, &self.links, self.q, &bc, self.twist_rank, &self.assembly)?.matrix)
    }

    fn multiplicity(&self) -> usize {
        self.twist_rank.max(1)
    }

    fn dirichlet(&self) -> Result<LatticeOperator> {
        let carrier = build_carrier(&self.model, self.assembly.carrier_tiles.max(3))?;
        let mut op = assemble_dolbeault_with(
            &self.model,
            &self.links,
            self.q,
            &BoundaryCondition::DirichletU,
            self.twist_rank,
            &self.assembly,
        )?;
        for s in op.sites.iter_mut() {
            *s = carrier.to_model[*s];
        }
        Ok(op)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThetaGrid {
    pub per_circle: usize,
    /// Stop refining once the estimate moves by less than this fraction.
    pub refine_tol: f64,
    pub max_depth: usize,
}

impl Default for ThetaGrid {
    fn default() -> Self {
        ThetaGrid {
            per_circle: 64,
            refine_tol: 0.005,
            max_depth: 3,
        }
    }
}

impl ThetaGrid {
    pub fn uniform(per_circle: usize) -> Self {
        ThetaGrid {
            per_circle,
            max_depth: 0,
            ..Default::default()
        }
    }

    /// Midpoints and weights of the level-0 grid.
    pub fn points(&self, d: usize) -> Vec<(Vec<f64>, f64)> {
        let n = self.per_circle.max(1);
        let total = n.pow(d as u32);
        let w = 1.0 / total as f64;
        (0..total)
            .map(|mut idx| {
                let mut th = Vec::with_capacity(d);
                for _ in 0..d {
                    th.push(2.0 * PI * ((idx % n) as f64 + 0.5) / n as f64);
                    idx /= n;
                }
                (th, w)
            })
            .collect()
    }
}

pub enum GammaSystem {
    Finite {
        /// Operator on the whole cover M.
        op: LatticeOperator,
        order: usize,
        dirichlet_u: LatticeOperator,
        /// Per group element: site map and magnetic-translation phases.
        action: Vec<(Vec<usize>, Vec<C64>)>,
        fundamental: Vec<usize>,
    },
    Bloch {
        family: Box<dyn FiberFamily>,
        grid: ThetaGrid,
        dirichlet_u: LatticeOperator,
    },
}

impl GammaSystem {
    /// Scaled Dolbeault Laplacian on a model, as a Γ-periodic family.
    pub fn dolbeault(
        model: &ModelManifold,
        links: &BundleLinkData,
        q: usize,
        twist_rank: usize,
        assembly: &AssemblyOptions,
        grid: ThetaGrid,
    ) -> Result<Self> {
        match &model.cover {
            CoverGroup::Finite { elements } => {
                let op = assemble_dolbeault_with(model, links, q, &BoundaryCondition::Periodic, twist_rank, assembly)?;
                let dirichlet_u =
                    assemble_dolbeault_with(model, links, q, &BoundaryCondition::DirichletU, twist_rank, assembly)?;
                let action = elements
                    .iter()
                    .map(|g| Ok((g.clone(), magnetic_translation(model, links, g)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(GammaSystem::Finite {
                    op,
                    order: elements.len(),
                    dirichlet_u,
                    action,
                    fundamental: model.fundamental_domain.clone(),
                })
            }
            CoverGroup::FreeAbelian(_) => {
                let family = DolbeaultBloch {
                    model: model.clone(),
                    links: links.clone(),
                    q,
                    twist_rank,
                    assembly: assembly.clone(),
                };
                let dirichlet_u = family.dirichlet()?;
                Ok(GammaSystem::Bloch {
                    family: Box::new(family),
                    grid,
                    dirichlet_u,
                })
            }
        }
    }

    pub fn bloch(family: Box<dyn FiberFamily>, grid: ThetaGrid) -> Result<Self> {
        let dirichlet_u = family.dirichlet()?;
        Ok(GammaSystem::Bloch {
            family,
            grid,
            dirichlet_u,
        })
    }

    pub fn dirichlet_u(&self) -> &LatticeOperator {
        match self {
            GammaSystem::Finite { dirichlet_u, .. } | GammaSystem::Bloch { dirichlet_u, .. } => dirichlet_u,
        }
    }

    pub fn multiplicity(&self) -> usize {
        match self {
            GammaSystem::Finite { op, .. } => op.multiplicity.max(1),
            GammaSystem::Bloch { family, .. } => family.multiplicity(),
        }
    }

    /// Dense action matrices on one copy of the finite cover.
    pub fn action_matrices(&self) -> Vec<DMatrix<C64>> {
        match self {
            GammaSystem::Finite { op, action, .. } => {
                let n = op.matrix.nrows();
                let c = op.components;
                action
                    .iter()
                    .map(|(map, phase)| {
                        let mut m = DMatrix::from_element(n, n, zero());
                        for (s, (&gs, &p)) in map.iter().zip(phase).enumerate() {
                            for a in 0..c {
                                m[(gs * c + a, s * c + a)] = p;
                            }
                        }
                        m
                    })
                    .collect()
            }
            GammaSystem::Bloch { .. } => Vec::new(),
        }
    }

    /// Fibres with normalised weights: the cover itself for finite Γ, the
    /// level-0 grid otherwise.
    pub fn fibers(&self) -> Vec<(Vec<f64>, f64)> {
        match self {
            GammaSystem::Finite { order, .. } => vec![(Vec::new(), 1.0 / *order as f64)],
            GammaSystem::Bloch { family, grid, .. } => grid.points(family.torus_dim()),
        }
    }

    /// The cover operator for finite Γ (θ ignored), H(θ) otherwise.
    pub fn fiber_matrix(&self, theta: &[f64]) -> Result<CsrMatrix> {
        match self {
            GammaSystem::Finite { op, .. } => Ok(op.matrix.clone()),
            GammaSystem::Bloch { family, .. } => family.fiber(theta),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberSample {
    pub theta: Vec<f64>,
    pub weight: f64,
    pub count: usize,
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaCount {
    pub lambda: f64,
    pub value: f64,
    pub uncertified_weight: f64,
    pub fibers_evaluated: usize,
    pub depth: usize,
    /// Tr(E_λ)/|Γ| from a dense spectral projector (finite Γ, small covers).
    pub projector_trace: Option<f64>,
    pub trace: Vec<FiberSample>,
}

struct Cell {
    center: Vec<f64>,
    width: f64,
    weight: f64,
    count: usize,
    certified: bool,
}

fn eval_cells(family: &dyn FiberFamily, lambda: f64, specs: Vec<(Vec<f64>, f64, f64)>) -> Result<Vec<Cell>> {
    crate::par::try_map(&specs, |(c, width, weight)| {
        let h = family.fiber(c)?;
        let r = count_below_matrix(&h, lambda)?;
        Ok(Cell {
            center: c.clone(),
            width: *width,
            weight: *weight,
            count: r.count,
            certified: r.certified,
        })
    })
}

fn children(cell: &Cell) -> Vec<(Vec<f64>, f64, f64)> {
    let d = cell.center.len();
    let w = cell.width / 2.0;
    (0..1usize << d)
        .map(|mask| {
            let c = cell
                .center
                .iter()
                .enumerate()
                .map(|(a, &x)| if mask >> a & 1 == 1 { x + w / 2.0 } else { x - w / 2.0 })
                .collect();
            (c, w, cell.weight / (1usize << d) as f64)
        })
        .collect()
}

fn bloch_count(family: &dyn FiberFamily, grid: &ThetaGrid, lambda: f64) -> Result<GammaCount> {
    let d = family.torus_dim();
    let n = grid.per_circle.max(1);
    let width = 2.0 * PI / n as f64;
    let specs = grid.points(d).into_iter().map(|(t, w)| (t, width, w)).collect();
    let level0 = eval_cells(family, lambda, specs)?;
    let mut fibers = level0.len();
    let estimate = |cells: &[Cell]| cells.iter().map(|c| c.weight * c.count as f64).sum::<f64>();

    // cells whose count differs from a periodic grid neighbour
    let mut jumpy: Vec<bool> = (0..level0.len())
        .map(|i| {
            let mut stride = 1;
            let mut rest = i;
            let mut found = false;
            for _ in 0..d {
                let x = rest % n;
                rest /= n;
                for nx in [(x + 1) % n, (x + n - 1) % n] {
                    let j = i - x * stride + nx * stride;
                    if level0[j].count != level0[i].count {
                        found = true;
                    }
                }
                stride *= n;
            }
            found
        })
        .collect();
    let mut cells = level0;
    let mut depth = 0;
    let mut value = estimate(&cells);
    while depth < grid.max_depth && jumpy.iter().any(|&j| j) {
        let mut next = Vec::with_capacity(cells.len());
        let mut pending = Vec::new();
        let mut groups = Vec::new();
        for (c, j) in cells.into_iter().zip(jumpy) {
            if j {
                let ch = children(&c);
                groups.push(ch.len());
                pending.extend(ch);
            } else {
                next.push((c, false));
            }
        }
        let evaluated = eval_cells(family, lambda, pending)?;
        fibers += evaluated.len();
        let mut it = evaluated.into_iter();
        for g in groups {
            let sibs: Vec<Cell> = it.by_ref().take(g).collect();
            let split = sibs.iter().any(|c| c.count != sibs[0].count);
            next.extend(sibs.into_iter().map(|c| (c, split)));
        }
        depth += 1;
        let (c2, j2): (Vec<Cell>, Vec<bool>) = next.into_iter().unzip();
        cells = c2;
        jumpy = j2;
        let new_value = estimate(&cells);
        let settled = (new_value - value).abs() <= grid.refine_tol * new_value.abs().max(f64::MIN_POSITIVE);
        value = new_value;
        if settled {
            break;
        }
    }
    let r = family.multiplicity() as f64;
    let uncertified_weight: f64 = cells.iter().filter(|c| !c.certified).map(|c| c.weight).sum();
    let mut trace: Vec<FiberSample> = cells
        .into_iter()
        .map(|c| FiberSample {
            theta: c.center,
            weight: c.weight,
            count: c.count,
            certified: c.certified,
        })
        .collect();
    trace.sort_by(|a, b| {
        a.theta
            .iter()
            .zip(&b.theta)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(GammaCount {
        lambda,
        value: value * r,
        uncertified_weight,
        fibers_evaluated: fibers,
        depth,
        projector_trace: None,
        trace,
    })
}

/// Dense dimensions up to which the projector path is also evaluated.
pub const PROJECTOR_CHECK_DIM: usize = 400;

/// N_Γ(λ, H) = dim_Γ of the spectral subspace below λ.
pub fn gamma_counting(sys: &GammaSystem, lambda: f64) -> Result<GammaCount> {
    match sys {
        GammaSystem::Finite {
            op, order, fundamental, ..
        } => {
            let c = count_below(op, lambda)?;
            let value = c.count as f64 / *order as f64;
            let projector_trace = if op.matrix.nrows() <= PROJECTOR_CHECK_DIM && c.certified {
                let p = spectral_projector(&op.matrix.to_dense(), lambda);
                let fd: Vec<usize> = fundamental
                    .iter()
                    .flat_map(|&s| (0..op.components).map(move |a| s * op.components + a))
                    .collect();
                let module = GammaModuleRep::FiniteGroup {
                    projection: p,
                    action: sys.action_matrices(),
                    fundamental: fd,
                };
                Some(gamma_dim(&module)? * op.multiplicity as f64)
            } else {
                None
            };
            if let Some(t) = projector_trace {
                if (t - value).abs() > 1e-8 * value.max(1.0) {
                    return Err(Error::NoConvergence(format!(
                        "projector trace {t} disagrees with inertia count {value}"
                    )));
                }
            }
            Ok(GammaCount {
                lambda,
                value,
                uncertified_weight: if c.certified { 0.0 } else { 1.0 },
                fibers_evaluated: 1,
                depth: 0,
                projector_trace,
                trace: vec![FiberSample {
                    theta: Vec::new(),
                    weight: 1.0 / *order as f64,
                    count: c.count,
                    certified: c.certified,
                }],
            })
        }
        GammaSystem::Bloch { family, grid, .. } => {
            let c = bloch_count(family.as_ref(), grid, lambda)?;
            if c.uncertified_weight > EDGE_WEIGHT {
                return Err(Error::LambdaOnSpectrumEdge {
                    lambda,
                    weight: c.uncertified_weight,
                });
            }
            Ok(c)
        }
    }
}

/// E_λ = Σ_{e ≤ λ} v vᴴ.
pub fn spectral_projector(h: &DMatrix<C64>, lambda: f64) -> DMatrix<C64> {
    let (vals, vecs) = dense_eigh(h);
    let cols: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] <= lambda).collect();
    let b = DMatrix::from_fn(h.nrows(), cols.len(), |i, j| vecs[(i, cols[j])]);
    &b * b.adjoint()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletRecord {
    pub lambda: f64,
    pub n_gamma: f64,
    pub n_dirichlet: usize,
    pub certified: bool,
    pub holds: bool,
}

/// N_Γ(λ, H) ≥ N(λ, H_0) with H_0 the hard-wall restriction to U.
pub fn dirichlet_lower_bound_check(sys: &GammaSystem, lambda: f64) -> Result<DirichletRecord> {
    let g = gamma_counting(sys, lambda)?;
    let d = count_below(sys.dirichlet_u(), lambda)?;
    Ok(DirichletRecord {
        lambda,
        n_gamma: g.value,
        n_dirichlet: d.count,
        certified: d.certified && g.uncertified_weight == 0.0,
        holds: g.value + 1e-9 >= d.count as f64,
    })
}

fn check_form_bound(h: &DMatrix<C64>, p: &DMatrix<C64>, lambda: f64) -> Result<()> {
    let b = range_basis(p);
    if b.ncols() == 0 {
        return Ok(());
    }
    let hb = b.adjoint() * h * &b;
    let hb = (&hb + hb.adjoint()) * C64::new(0.5, 0.0);
    let (vals, vecs) = dense_eigh(&hb);
    let top = vals.len() - 1;
    let tol = 1e-10 * max_abs(h).max(1.0);
    if vals[top] > lambda + tol {
        let w = &b * vecs.column(top);
        return Err(Error::FormBoundViolated {
            value: vals[top],
            bound: lambda,
            witness: w.iter().map(|z| (z.re, z.im)).collect(),
        });
    }
    Ok(())
}

/// Certified N_Γ(λ, H) ≥ dim_Γ L for a Γ-invariant L with h(f, f) ≤ λ‖f‖² on L.
///
/// The candidate lives in one copy of the twisted fibre; the returned bound
/// includes the twist multiplicity.
pub fn variational_lower_bound(sys: &GammaSystem, candidate: &GammaModuleRep, lambda: f64) -> Result<f64> {
    candidate.validate()?;
    match (sys, candidate) {
        (GammaSystem::Finite { op, .. }, GammaModuleRep::FiniteGroup { projection, .. }) => {
            check_form_bound(&op.matrix.to_dense(), projection, lambda)?;
        }
        (
            GammaSystem::Bloch { family, .. },
            GammaModuleRep::BlochFamily {
                thetas, projections, ..
            },
        ) => {
            let items: Vec<usize> = (0..thetas.len()).collect();
            crate::par::try_map(&items, |&i| {
                check_form_bound(&family.fiber(&thetas[i])?.to_dense(), &projections[i], lambda)
            })?;
        }
        _ => {
            return Err(Error::NotAProjection(
                "candidate representation does not match the operator family".into(),
            ))
        }
    }
    Ok(gamma_dim(candidate)? * sys.multiplicity() as f64)
}

/// The Dirichlet eigenfunctions below λ, extended by zero and spread over Γ.
pub fn dirichlet_certificate(sys: &GammaSystem, lambda: f64) -> Result<GammaModuleRep> {
    let h0 = sys.dirichlet_u();
    let c = h0.components;
    let (vals, vecs) = dense_eigh(&h0.matrix.to_dense());
    let low: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] <= lambda).collect();
    let embed = |n: usize| -> DMatrix<C64> {
        let mut b = DMatrix::from_element(n, low.len(), zero());
        for (j, &e) in low.iter().enumerate() {
            for (i, &s) in h0.sites.iter().enumerate() {
                for a in 0..c {
                    b[(s * c + a, j)] = vecs[(i * c + a, e)];
                }
            }
        }
        b
    };
    match sys {
        GammaSystem::Finite {
            op, action, fundamental, ..
        } => {
            let n = op.matrix.nrows();
            let b = embed(n);
            let mut cols = Vec::new();
            for (map, phase) in action {
                for j in 0..b.ncols() {
                    let u: Vec<C64> = b.column(j).iter().copied().collect();
                    cols.push(apply_translation(map, phase, c, &u));
                }
            }
            let all = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
            let fd = fundamental.iter().flat_map(|&s| (0..c).map(move |a| s * c + a)).collect();
            Ok(GammaModuleRep::FiniteGroup {
                projection: projector_onto(&all),
                action: sys.action_matrices(),
                fundamental: fd,
            })
        }
        GammaSystem::Bloch { family, grid, .. } => {
            let n = family.fiber(&vec![0.0; family.torus_dim()])?.nrows();
            let p = projector_onto(&embed(n));
            let pts = grid.points(family.torus_dim());
            Ok(GammaModuleRep::BlochFamily {
                thetas: pts.iter().map(|(t, _)| t.clone()).collect(),
                weights: pts.iter().map(|(_, w)| *w).collect(),
                projections: vec![p; pts.len()],
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankPerturbationRecord {
    pub mu: f64,
    pub epsilon: f64,
    pub p: f64,
    pub n_gamma: f64,
    pub min_eigenvalue: f64,
    pub holds: bool,
}

/// If H + T ≥ μ then N_Γ(μ − ε, H) ≤ rank_Γ T.
///
/// `t` returns the perturbation on the fibre at θ (empty θ for finite Γ).
pub fn rank_perturbation_check<F>(sys: &GammaSystem, t: F, mu: f64) -> Result<RankPerturbationRecord>
where
    F: Fn(&[f64]) -> DMatrix<C64> + Sync + Send,
{
    let eps = 1e-6 * mu.abs();
    let fibers = sys.fibers();
    let per = crate::par::try_map(&fibers, |(theta, w)| {
        let h = sys.fiber_matrix(theta)?.to_dense();
        let tm = t(theta);
        if tm.shape() != h.shape() {
            return Err(Error::InvalidModel("perturbation has the wrong shape".into()));
        }
        let ev = dense_eigenvalues(&(&h + &tm));
        let lo = ev.first().copied().unwrap_or(f64::INFINITY);
        let count = dense_eigenvalues(&h).iter().filter(|&&e| e <= mu - eps).count();
        Ok((lo, *w * numerical_rank(&tm) as f64, *w * count as f64))
    })?;
    let r = sys.multiplicity() as f64;
    let min_eigenvalue = per.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
    let tol = 1e-10 * mu.abs().max(1.0);
    if min_eigenvalue < mu - tol {
        return Err(Error::PerturbationBelowMu(format!(
            "min spec(H + T) = {min_eigenvalue} < {mu}"
        )));
    }
    let p = r * per.iter().map(|x| x.1).sum::<f64>();
    let n_gamma = r * per.iter().map(|x| x.2).sum::<f64>();
    Ok(RankPerturbationRecord {
        mu,
        epsilon: eps,
        p,
        n_gamma,
        min_eigenvalue,
        holds: n_gamma <= p + 1e-9,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichRecord {
    pub k: u32,
    pub q: usize,
    pub lambda: f64,
    pub lower: usize,
    pub n_gamma: f64,
    pub upper: usize,
    pub c_used: f64,
    pub s: f64,
    pub certified: bool,
    pub lower_holds: bool,
    pub upper_holds: bool,
}

#[derive(Clone, Debug)]
pub struct SandwichOptions {
    /// Cutoff width; `None` means k^{−1/4} clamped to twice the mesh.
    pub s: Option<f64>,
    pub grid: ThetaGrid,
    pub assembly: AssemblyOptions,
}

impl Default for SandwichOptions {
    fn default() -> Self {
        SandwichOptions {
            s: None,
            grid: ThetaGrid::default(),
            assembly: AssemblyOptions::default(),
        }
    }
}

pub fn default_width(model: &ModelManifold, k: u32) -> f64 {
    (k as f64).powf(-0.25).max(2.0 * model.mesh_h())
}

/// Everything needed to sandwich N_Γ at one (k, q): the Γ-system, both
/// Dirichlet problems and the localisation constant.
pub struct Sandwich {
    pub k: u32,
    pub q: usize,
    pub system: GammaSystem,
    pub upper_op: LatticeOperator,
    pub defect: ImsDefect,
}

impl Sandwich {
    pub fn new(model: &ModelManifold, field: &CurvatureField, k: u32, q: usize, opts: &SandwichOptions) -> Result<Self> {
        let links = crate::geomodel::link_phases_from_curvature(model, field, k)?;
        let r = field.twist_rank;
        let s = opts.s.unwrap_or_else(|| default_width(model, k));
        let system = GammaSystem::dolbeault(model, &links, q, r, &opts.assembly, opts.grid.clone())?;
        let upper_op =
            assemble_dolbeault_with(model, &links, q, &BoundaryCondition::DirichletUs(s), r, &opts.assembly)?;
        let defect = ims_constant(model, &links, k, q, s, &opts.assembly)?;
        Ok(Sandwich {
            k,
            q,
            system,
            upper_op,
            defect,
        })
    }

    pub fn check(&self, lambda: f64) -> Result<SandwichRecord> {
        let k = self.k;
        let lower = count_below(self.system.dirichlet_u(), lambda)?;
        let g = gamma_counting(&self.system, lambda)?;
        let shift = self.defect.c / (k as f64).sqrt();
        let upper = count_below(&self.upper_op, lambda + shift)?;
        let certified = lower.certified && upper.certified && g.uncertified_weight == 0.0;
        Ok(SandwichRecord {
            k,
            q: self.q,
            lambda,
            lower: lower.count,
            n_gamma: g.value,
            upper: upper.count,
            c_used: self.defect.c,
            s: self.defect.s,
            certified,
            lower_holds: lower.count as f64 <= g.value + 1e-9,
            upper_holds: g.value <= upper.count as f64 + 1e-9,
        })
    }
}

pub fn sandwich_check(
    model: &ModelManifold,
    field: &CurvatureField,
    k: u32,
    q: usize,
    lambda: f64,
    opts: &SandwichOptions,
) -> Result<SandwichRecord> {
    Sandwich::new(model, field, k, q, opts)?.check(lambda)
}

/// IMS constant on the partition's carrier; for Z^d the worst of the
/// super-torus twists {0, π}^d.
pub fn ims_constant(
    model: &ModelManifold,
    links: &BundleLinkData,
    k: u32,
    q: usize,
    s: f64,
    assembly: &AssemblyOptions,
) -> Result<ImsDefect> {
    let partition = ims_partition(model, s)?;
    let grid = &partition.carrier.grid;
    let base = carrier_links(&partition.carrier, links);
    let d = match model.cover {
        CoverGroup::FreeAbelian(d) => d,
        _ => 0,
    };
    let twists: Vec<Vec<f64>> = (0..1usize << d)
        .map(|m| (0..d).map(|a| if m >> a & 1 == 1 { PI } else { 0.0 }).collect())
        .collect();
    let n = model.complex_dim;
    let comps = crate::lattice_op::binomial(n, q);
    let results = crate::par::try_map(&twists, |th| {
        let l = if d == 0 { base.clone() } else { base.twisted(grid, th) };
        let matrix = dolbeault_matrix(grid, &l, q, assembly.wilson)?.scale(1.0 / k as f64);
        let op = LatticeOperator {
            matrix,
            multiplicity: 1,
            boundary: BoundaryCondition::Periodic,
            scale: 1.0 / k as f64,
            form_degree: q,
            power_k: k,
            components: comps,
            sites: (0..grid.n_sites()).collect(),
            psd: true,
        };
        ims_defect_bound(&op, &partition, k)
    })?;
    Ok(results
        .into_iter()
        .reduce(|a, b| if b.c > a.c { b } else { a })
        .expect("at least one twist"))
}

/// A finite complex of Γ-modules L_q = ℓ²(Z/m) ⊗ C^{n_q} with equivariant differentials.
#[derive(Clone, Debug)]
pub struct FiniteGammaComplex {
    pub order: usize,
    pub multiplicities: Vec<usize>,
    /// d_q : L_q → L_{q+1}
    pub differentials: Vec<DMatrix<C64>>,
}

impl FiniteGammaComplex {
    pub fn new(order: usize, multiplicities: Vec<usize>, differentials: Vec<DMatrix<C64>>) -> Result<Self> {
        let c = FiniteGammaComplex {
            order,
            multiplicities,
            differentials,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.multiplicities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multiplicities.is_empty()
    }

    pub fn module_dim(&self, q: usize) -> usize {
        self.order * self.multiplicities[q]
    }

    /// Generator of Z/m acting on L_q: (g·u)(h) = u(h − 1).
    pub fn generator(&self, q: usize) -> DMatrix<C64> {
        let m = self.order;
        let nq = self.multiplicities[q];
        let mut g = DMatrix::from_element(m * nq, m * nq, zero());
        for h in 0..m {
            for i in 0..nq {
                g[(((h + 1) % m) * nq + i, h * nq + i)] = C64::new(1.0, 0.0);
            }
        }
        g
    }

    fn validate(&self) -> Result<()> {
        if self.order == 0 || self.differentials.len() + 1 != self.len().max(1) {
            return Err(Error::NotAComplex("need one differential between consecutive modules".into()));
        }
        for (q, d) in self.differentials.iter().enumerate() {
            if d.nrows() != self.module_dim(q + 1) || d.ncols() != self.module_dim(q) {
                return Err(Error::NotAComplex(format!("d_{q} has the wrong shape")));
            }
            let scale = max_abs(d).max(1.0);
            let eq = max_abs(&(d * self.generator(q) - self.generator(q + 1) * d));
            if eq > 1e-12 * scale {
                return Err(Error::NotAComplex(format!("d_{q} is not equivariant ({eq:e})")));
            }
            if let Some(next) = self.differentials.get(q + 1) {
                let sq = max_abs(&(next * d));
                if sq > 1e-12 * scale * max_abs(next).max(1.0) {
                    return Err(Error::NotAComplex(format!("d_{} d_{q} ≠ 0 ({sq:e})", q + 1)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerRow {
    pub q: usize,
    pub l_q: f64,
    pub h_q: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub inequality_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerReport {
    pub rows: Vec<EulerRow>,
    pub equality_at_top: bool,
    pub top_defect: f64,
}

pub const EULER_TOL: f64 = 1e-8;

/// Reduced cohomology Γ-dimensions and the alternating-sum inequalities.
pub fn euler_inequalities(cx: &FiniteGammaComplex) -> Result<EulerReport> {
    cx.validate()?;
    let m = cx.order as f64;
    let ranks: Vec<f64> = cx.differentials.iter().map(|d| numerical_rank(d) as f64 / m).collect();
    let l: Vec<f64> = cx.multiplicities.iter().map(|&n| n as f64).collect();
    let h: Vec<f64> = (0..cx.len())
        .map(|q| {
            let out = ranks.get(q).copied().unwrap_or(0.0);
            let inc = if q > 0 { ranks[q - 1] } else { 0.0 };
            l[q] - out - inc
        })
        .collect();
    let alt = |x: &[f64], q: usize| crate::morse_bounds::alternating(x, q);
    let rows: Vec<EulerRow> = (0..cx.len())
        .map(|q| {
            let lhs = alt(&h, q);
            let rhs = alt(&l, q);
            EulerRow {
                q,
                l_q: l[q],
                h_q: h[q],
                lhs,
                rhs,
                inequality_holds: lhs <= rhs + EULER_TOL,
            }
        })
        .collect();
    let top_defect = rows.last().map_or(0.0, |r| (r.lhs - r.rhs).abs());
    Ok(EulerReport {
        rows,
        equality_at_top: top_defect <= EULER_TOL,
        top_defect,
    })
}

fn random_unitary<R: Rng>(rng: &mut R, n: usize) -> DMatrix<C64> {
    let a = DMatrix::from_fn(n, n, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    a.qr().q()
}

/// Random equivariant complex over Z/m built character by character.
///
/// Each Fourier block gets its own exact complex with random ranks; the
/// blocks are then assembled in the group basis.
pub fn random_equivariant_complex<R: Rng>(rng: &mut R, order: usize, multiplicities: &[usize]) -> FiniteGammaComplex {
    let len = multiplicities.len();
    let m = order;
    let mut blocks: Vec<Vec<DMatrix<C64>>> = vec![Vec::with_capacity(m); len.saturating_sub(1)];
    for _chi in 0..m {
        let mut incoming = 0;
        let bases: Vec<DMatrix<C64>> = multiplicities.iter().map(|&n| random_unitary(rng, n)).collect();
        for q in 0..len.saturating_sub(1) {
            let nq = multiplicities[q];
            let next = multiplicities[q + 1];
            let room = nq - incoming;
            let rank = rng.gen_range(0..=room.min(next));
            // columns [0, incoming) span the image, the last `rank` columns the coimage
            let coimage = bases[q].columns(nq - rank, rank).into_owned();
            let image = bases[q + 1].columns(0, rank).into_owned();
            let core = DMatrix::from_fn(rank, rank, |i, j| {
                C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) + if i == j { C64::new(2.0, 0.0) } else { zero() }
            });
            blocks[q].push(image * core * coimage.adjoint());
            incoming = rank;
        }
    }
    let differentials = (0..len.saturating_sub(1))
        .map(|q| {
            let (nq, nn) = (multiplicities[q], multiplicities[q + 1]);
            let mut d = DMatrix::from_element(m * nn, m * nq, zero());
            for (chi, b) in blocks[q].iter().enumerate() {
                for g in 0..m {
                    for h in 0..m {
                        // (f_χ f_χᴴ)_{gh} = ω^{χ(g−h)}/m
                        let ph = C64::from_polar(1.0 / m as f64, 2.0 * PI * (chi * (g + m - h) % m) as f64 / m as f64);
                        for i in 0..nn {
                            for j in 0..nq {
                                d[(g * nn + i, h * nq + j)] += ph * b[(i, j)];
                            }
                        }
                    }
                }
            }
            d
        })
        .collect();
    FiniteGammaComplex {
        order,
        multiplicities: multiplicities.to_vec(),
        differentials,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_and_empty_modules() {
        let grid = ThetaGrid::uniform(8);
        let pts = grid.points(1);
        let full = GammaModuleRep::BlochFamily {
            thetas: pts.iter().map(|p| p.0.clone()).collect(),
            weights: pts.iter().map(|p| p.1).collect(),
            projections: vec![DMatrix::identity(3, 3); pts.len()],
        };
        assert!((gamma_dim(&full).unwrap() - 3.0).abs() < 1e-14);
        let empty = GammaModuleRep::FiniteGroup {
            projection: DMatrix::zeros(4, 4),
            action: vec![DMatrix::identity(4, 4)],
            fundamental: vec![0, 1],
        };
        assert_eq!(gamma_dim(&empty).unwrap(), 0.0);
        let bad = GammaModuleRep::FiniteGroup {
            projection: DMatrix::identity(2, 2) * C64::new(0.5, 0.0),
            action: vec![],
            fundamental: vec![0],
        };
        assert!(matches!(gamma_dim(&bad), Err(Error::NotAProjection(_))));
    }

    #[test]
    fn chain_band_measure() {
        let sys = GammaSystem::bloch(Box::new(HoppingFamily::chain_laplacian(1)), ThetaGrid::uniform(64)).unwrap();
        let half = gamma_counting(&sys, 2.0).unwrap();
        assert!((half.value - 0.5).abs() < 1e-14);
        let full = gamma_counting(&sys, 4.0).unwrap();
        assert!((full.value - 1.0).abs() < 1e-14);
        assert_eq!(gamma_counting(&sys, -0.1).unwrap().value, 0.0);
    }

    #[test]
    fn chain_dirichlet_interior() {
        let f = HoppingFamily::chain_laplacian(4);
        let d = f.dirichlet().unwrap();
        assert_eq!(d.sites, vec![1, 2]);
        let ev = dense_eigenvalues(&d.matrix.to_dense());
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn random_complexes_are_complexes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in 1..4 {
            let cx = random_equivariant_complex(&mut rng, m, &[3, 4, 2, 3]);
            FiniteGammaComplex::new(cx.order, cx.multiplicities.clone(), cx.differentials.clone()).unwrap();
            let rep = euler_inequalities(&cx).unwrap();
            assert!(rep.equality_at_top);
            assert!(rep.rows.iter().all(|r| r.inequality_holds));
        }
    }

    #[test]
    fn isomorphism_has_no_cohomology() {
        let d = DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), zero(), zero(), C64::new(3.0, 0.0)]);
        let cx = FiniteGammaComplex::new(1, vec![2, 2], vec![d]).unwrap();
        let rep = euler_inequalities(&cx).unwrap();
        assert_eq!(rep.rows[0].h_q, 0.0);
        assert_eq!(rep.rows[1].h_q, 0.0);
        assert!(rep.rows[0].lhs < rep.rows[0].rhs);
        let single = FiniteGammaComplex::new(2, vec![3], vec![]).unwrap();
        let rep = euler_inequalities(&single).unwrap();
        assert_eq!(rep.rows[0].h_q, 3.0);
        assert!(rep.equality_at_top);
    }

    #[test]
    fn non_complex_rejected() {
        let d0 = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let d1 = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        assert!(matches!(
            FiniteGammaComplex::new(1, vec![1, 1, 1], vec![d0, d1]),
            Err(Error::NotAComplex(_))
        ));
    }
}
