//! Dense and iterative Hermitian eigensolvers.

use super::ldl::Skyline;
use super::ordering::reverse_cuthill_mckee;
use super::sparse::{dot, norm, CsrMatrix, C64};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ascending eigenvalues and matching eigenvector columns.
pub fn dense_eigh(a: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let h = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn dense_eigenvalues(a: &DMatrix<C64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let h = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let mut v: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
    pub residuals: Vec<f64>,
    pub norm: f64,
    pub iterations: usize,
    pub dense: bool,
}

#[derive(Clone, Debug)]
pub struct SubspaceOptions {
    pub tol_rel: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Operator is known to be positive semidefinite.
    pub psd: bool,
    /// Dimension at or below which the dense solver is used.
    pub dense_cutoff: usize,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        SubspaceOptions {
            tol_rel: 1e-8,
            max_iter: 400,
            seed: 0x5eed,
            psd: false,
            dense_cutoff: 400,
        }
    }
}

fn orthonormalize(block: &mut Vec<Vec<C64>>, rng: &mut ChaCha8Rng) {
    let n = block.first().map_or(0, |v| v.len());
    for i in 0..block.len() {
        for _pass in 0..2 {
            for j in 0..i {
                let (head, tail) = block.split_at_mut(i);
                let c = dot(&head[j], &tail[0]);
                for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                    *x -= c * y;
                }
            }
        }
        let mut nrm = norm(&block[i]);
        if nrm < 1e-10 {
            // replace a collapsed direction by a fresh random one
            block[i] = random_vector(n, rng);
            for j in 0..i {
                let (head, tail) = block.split_at_mut(i);
                let c = dot(&head[j], &tail[0]);
                for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                    *x -= c * y;
                }
            }
            nrm = norm(&block[i]);
        }
        for x in &mut block[i] {
            *x /= nrm;
        }
    }
}

fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    (0..n)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

fn dense_lowest(a: &CsrMatrix, m: usize, nrm: f64) -> EigenPairs {
    let d = a.to_dense();
    let (vals, vecs) = dense_eigh(&d);
    let mut out = EigenPairs {
        values: Vec::new(),
        vectors: Vec::new(),
        residuals: Vec::new(),
        norm: nrm,
        iterations: 0,
        dense: true,
    };
    for i in 0..m.min(vals.len()) {
        let v: Vec<C64> = vecs.column(i).iter().copied().collect();
        let av = a.mul_vec(&v);
        let r: f64 = av
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - y * vals[i]).norm_sqr())
            .sum::<f64>()
            .sqrt();
        out.values.push(vals[i]);
        out.vectors.push(v);
        out.residuals.push(r);
    }
    out
}

/// The `m` smallest eigenpairs by block shift-invert subspace iteration with
/// Rayleigh–Ritz extraction. The shift is kept below the spectrum, which is
/// confirmed by the inertia of the factorization.
pub fn lowest_eigenpairs(a: &CsrMatrix, m: usize, opts: &SubspaceOptions) -> Result<EigenPairs, String> {
    let n = a.nrows();
    let m = m.min(n);
    let nrm = a.norm_bound().max(f64::MIN_POSITIVE);
    if n <= opts.dense_cutoff || m == n {
        return Ok(dense_lowest(a, m, nrm));
    }
    let b = (m + (m / 2).max(6)).min(n);
    let sky = Skyline::new(a, reverse_cuthill_mckee(a));
    let tiny = 1e-15 * nrm;
    let mut sigma = if opts.psd {
        -1e-8 * nrm
    } else {
        a.gershgorin().0 - 1e-3 * nrm
    };
    let mut fact = sky
        .factor(a, sigma, tiny)
        .map_err(|e| format!("shift factorization failed at row {}", e.row))?;
    if fact.inertia().negative > 0 {
        return Err("initial shift is not below the spectrum".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<C64>> = (0..b).map(|_| random_vector(n, &mut rng)).collect();
    orthonormalize(&mut x, &mut rng);
    let tol = opts.tol_rel * nrm;
    let mut refined = 0;
    for it in 1..=opts.max_iter {
        for v in x.iter_mut() {
            fact.solve(v);
        }
        orthonormalize(&mut x, &mut rng);
        let ax: Vec<Vec<C64>> = x.iter().map(|v| a.mul_vec(v)).collect();
        let mut t = DMatrix::<C64>::zeros(b, b);
        for i in 0..b {
            for j in i..b {
                let v = dot(&x[i], &ax[j]);
                t[(i, j)] = v;
                t[(j, i)] = v.conj();
            }
        }
        let (theta, z) = dense_eigh(&t);
        let mut newx = vec![vec![C64::new(0.0, 0.0); n]; b];
        let mut newax = vec![vec![C64::new(0.0, 0.0); n]; b];
        for c in 0..b {
            for r in 0..b {
                let zc = z[(r, c)];
                if zc == C64::new(0.0, 0.0) {
                    continue;
                }
                for (dst, src) in newx[c].iter_mut().zip(&x[r]) {
                    *dst += zc * src;
                }
                for (dst, src) in newax[c].iter_mut().zip(&ax[r]) {
                    *dst += zc * src;
                }
            }
        }
        let res: Vec<f64> = (0..b)
            .map(|c| {
                newax[c]
                    .iter()
                    .zip(&newx[c])
                    .map(|(p, v)| (p - v * theta[c]).norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        x = newx;
        if res[..m].iter().all(|&r| r <= tol) {
            return Ok(EigenPairs {
                values: theta[..m].to_vec(),
                vectors: x[..m].to_vec(),
                residuals: res[..m].to_vec(),
                norm: nrm,
                iterations: it,
                dense: false,
            });
        }
        // move the shift up towards the bottom of the spectrum once the Ritz
        // values have settled; inertia guards that it stays below
        if !opts.psd && refined < 3 && it % 6 == 0 {
            let gap = (theta[m.min(b - 1)] - theta[0]).max(1e-6 * nrm);
            let cand = theta[0] - 0.5 * gap;
            if cand > sigma {
                if let Ok(f) = sky.factor(a, cand, tiny) {
                    if f.inertia().negative == 0 {
                        fact = f;
                        sigma = cand;
                        refined += 1;
                    }
                }
            }
        }
    }
    Err(format!(
        "subspace iteration: {m} eigenpairs not within residual {tol:e} after {} iterations",
        opts.max_iter
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extreme {
    Smallest,
    Largest,
}

/// Extreme eigenvalue by restarted Lanczos with full reorthogonalization.
/// Returns (value, vector, residual).
pub fn lanczos_extreme(
    a: &CsrMatrix,
    which: Extreme,
    tol_rel: f64,
    seed: u64,
) -> Result<(f64, Vec<C64>, f64), String> {
    let n = a.nrows();
    let nrm = a.norm_bound().max(f64::MIN_POSITIVE);
    if n <= 200 {
        let (vals, vecs) = dense_eigh(&a.to_dense());
        let i = if which == Extreme::Smallest { 0 } else { n - 1 };
        return Ok((vals[i], vecs.column(i).iter().copied().collect(), 0.0));
    }
    let steps = n.min(160);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = random_vector(n, &mut rng);
    let mut best = (0.0, start.clone(), f64::INFINITY);
    for _cycle in 0..40 {
        let s = norm(&start);
        let mut q: Vec<Vec<C64>> = vec![start.iter().map(|x| x / s).collect()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for j in 0..steps {
            let mut w = a.mul_vec(&q[j]);
            let aj = dot(&q[j], &w).re;
            alpha.push(aj);
            for _ in 0..2 {
                for qi in &q {
                    let c = dot(qi, &w);
                    for (x, y) in w.iter_mut().zip(qi) {
                        *x -= c * y;
                    }
                }
            }
            let bj = norm(&w);
            if j + 1 == steps || bj < 1e-12 * nrm {
                break;
            }
            beta.push(bj);
            q.push(w.iter().map(|x| x / bj).collect());
        }
        let k = alpha.len();
        let mut t = DMatrix::<C64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = C64::new(alpha[i], 0.0);
            if i + 1 < k {
                t[(i, i + 1)] = C64::new(beta[i], 0.0);
                t[(i + 1, i)] = C64::new(beta[i], 0.0);
            }
        }
        let (vals, vecs) = dense_eigh(&t);
        let c = if which == Extreme::Smallest { 0 } else { k - 1 };
        let mut v = vec![C64::new(0.0, 0.0); n];
        for (i, qi) in q.iter().take(k).enumerate() {
            let zi = vecs[(i, c)];
            for (dst, src) in v.iter_mut().zip(qi) {
                *dst += zi * src;
            }
        }
        let nv = norm(&v);
        for x in &mut v {
            *x /= nv;
        }
        let av = a.mul_vec(&v);
        let theta = dot(&v, &av).re;
        let r = av
            .iter()
            .zip(&v)
            .map(|(p, y)| (p - y * theta).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let _ = vals;
        if r < best.2 {
            best = (theta, v.clone(), r);
        }
        if r <= tol_rel * nrm {
            return Ok(best);
        }
        start = v;
    }
    Err(format!(
        "Lanczos: residual {:e} above {:e}",
        best.2,
        tol_rel * nrm
    ))
}

pub fn to_dvector(v: &[C64]) -> DVector<C64> {
    DVector::from_column_slice(v)
}
