//! Compressed sparse row storage for complex matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets. Duplicates are summed; entries
    /// that cancel to exactly zero are dropped.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut t: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        t.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<C64> = Vec::with_capacity(t.len());
        let mut i = 0;
        while i < t.len() {
            let (r, c, mut v) = t[i];
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            let mut j = i + 1;
            while j < t.len() && t[j].0 == r && t[j].1 == c {
                v += t[j].2;
                j += 1;
            }
            if v != C64::new(0.0, 0.0) {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
            }
            i = j;
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self::from_triplets(n, n, d.iter().enumerate().map(|(i, &x)| (i, i, C64::new(x, 0.0))))
    }

    pub fn from_dense(a: &DMatrix<C64>) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != C64::new(0.0, 0.0) {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[C64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v.iter()).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            let mut s = C64::new(0.0, 0.0);
            for (&j, &a) in c.iter().zip(v) {
                s += a * x[j];
            }
            *yi = s;
        }
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(
            self.ncols,
            self.nrows,
            self.triplets().map(|(i, j, v)| (j, i, v.conj())),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    /// a·self + b·other.
    pub fn add_scaled(&self, a: f64, other: &CsrMatrix, b: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        Self::from_triplets(
            self.nrows,
            self.ncols,
            self.triplets()
                .map(|(i, j, v)| (i, j, v * a))
                .chain(other.triplets().map(|(i, j, v)| (i, j, v * b))),
        )
    }

    pub fn add(&self, other: &CsrMatrix) -> Self {
        self.add_scaled(1.0, other, 1.0)
    }

    /// Sparse product self · other.
    pub fn matmul(&self, other: &CsrMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut acc = vec![C64::new(0.0, 0.0); other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut touched = Vec::new();
        let mut t = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            let (ca, va) = self.row(i);
            for (&k, &a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(k);
                for (&j, &b) in cb.iter().zip(vb) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = C64::new(0.0, 0.0);
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for &j in &touched {
                t.push((i, j, acc[j]));
            }
        }
        Self::from_triplets(self.nrows, other.ncols, t)
    }

    /// Principal-style submatrix with the given row and column index lists.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut colmap = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            colmap[old] = new;
        }
        let mut t = Vec::new();
        for (ni, &oi) in rows.iter().enumerate() {
            let (c, v) = self.row(oi);
            for (&j, &x) in c.iter().zip(v) {
                if colmap[j] != usize::MAX {
                    t.push((ni, colmap[j], x));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), t)
    }

    pub fn principal(&self, idx: &[usize]) -> Self {
        self.submatrix(idx, idx)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut a = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            a[(i, j)] += v;
        }
        a
    }

    /// max |A_ij − conj(A_ji)|.
    pub fn hermitian_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let mut d: f64 = 0.0;
        for (i, j, v) in self.triplets() {
            d = d.max((v - self.get(j, i).conj()).norm());
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Gershgorin enclosure (lo, hi) of the spectrum of a Hermitian matrix.
    pub fn gershgorin(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            let mut d = 0.0;
            let mut r = 0.0;
            for (&j, &x) in c.iter().zip(v) {
                if j == i {
                    d = x.re;
                } else {
                    r += x.norm();
                }
            }
            lo = lo.min(d - r);
            hi = hi.max(d + r);
        }
        if self.nrows == 0 {
            (0.0, 0.0)
        } else {
            (lo, hi)
        }
    }

    /// Upper bound on the spectral norm (max absolute row sum).
    pub fn norm_bound(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|x| x.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Kronecker product with the identity on the right: self ⊗ I_r.
    pub fn kron_identity(&self, r: usize) -> Self {
        Self::from_triplets(
            self.nrows * r,
            self.ncols * r,
            self.triplets()
                .flat_map(|(i, j, v)| (0..r).map(move |a| (i * r + a, j * r + a, v))),
        )
    }
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}
