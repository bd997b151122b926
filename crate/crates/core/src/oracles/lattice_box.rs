//! The operator `H_beta` restricted to the box `{-L, ..., L}^d` with
//! absorbing boundary, and its top eigenvalues.

use crate::error::{invalid, Error, Result};
use crate::gamma::SourceConfiguration;
use crate::lattice::{JumpKernel, LatticePoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest box accepted by the lattice oracles.
pub const MAX_BOX_SITES: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxGeometry {
    pub dim: usize,
    pub radius: usize,
    side: usize,
    sites: usize,
}

impl BoxGeometry {
    pub fn new(dim: usize, radius: usize) -> Result<Self> {
        let side = 2 * radius + 1;
        let mut sites = 1usize;
        for _ in 0..dim {
            sites = sites.checked_mul(side).filter(|&s| s <= MAX_BOX_SITES).ok_or(Error::BoxTooLarge(usize::MAX))?;
        }
        if sites > MAX_BOX_SITES {
            return Err(Error::BoxTooLarge(sites));
        }
        Ok(Self { dim, radius, side, sites })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn index(&self, x: &LatticePoint) -> Option<usize> {
        if x.dim() != self.dim {
            return None;
        }
        let l = self.radius as i64;
        let mut idx = 0usize;
        for &c in x.coords().iter().rev() {
            if c.abs() > l {
                return None;
            }
            idx = idx * self.side + (c + l) as usize;
        }
        Some(idx)
    }

    pub fn point(&self, mut idx: usize) -> LatticePoint {
        let l = self.radius as i64;
        let mut c = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            c.push((idx % self.side) as i64 - l);
            idx /= self.side;
        }
        LatticePoint::new(c)
    }
}

/// Sparse symmetric matrix in compressed rows.
#[derive(Debug, Clone)]
pub struct SparseSym {
    pub n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    pub diag: Vec<f64>,
}

impl SparseSym {
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = self.diag[i] * x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[i] = acc;
        }
    }

    /// Largest row sum of `A + shift I`; the norm of that matrix when its
    /// entries are nonnegative.
    pub fn shifted_row_sum(&self, shift: f64) -> f64 {
        (0..self.n)
            .map(|i| self.diag[i] + shift + self.vals[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest absolute row sum, a bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.diag[i].abs()
                    + (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| self.vals[k].abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// `H_beta` on the box: diagonal `a(0) + beta [x is a source]`, off-diagonal
/// `a(y - x)` for `x, y` inside the box.
#[derive(Debug, Clone)]
pub struct TruncatedOperator {
    pub geometry: BoxGeometry,
    pub matrix: SparseSym,
    pub source_indices: Vec<usize>,
}

impl TruncatedOperator {
    pub fn new(kernel: &JumpKernel, sources: &SourceConfiguration, beta: f64, radius: usize) -> Result<Self> {
        let d = kernel.dimension();
        if sources.dim() != d {
            return Err(invalid("source dimension does not match the kernel"));
        }
        let geometry = BoxGeometry::new(d, radius)?;
        let mut source_indices = Vec::new();
        for p in sources.points() {
            match geometry.index(p) {
                Some(i) => source_indices.push(i),
                None => return Err(invalid(format!("source {p} lies outside the box of radius {radius}"))),
            }
        }
        let stencil = kernel.jump_rates_within(2 * radius as i64);
        let n = geometry.sites();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            let x = geometry.point(i);
            for (z, a) in &stencil {
                if let Some(j) = geometry.index(&x.add(z)) {
                    cols.push(j as u32);
                    vals.push(*a);
                }
            }
            row_ptr.push(cols.len());
        }
        let mut diag = vec![kernel.diag_rate(); n];
        for &s in &source_indices {
            diag[s] += beta;
        }
        Ok(Self { geometry, matrix: SparseSym { n, row_ptr, cols, vals, diag }, source_indices })
    }

    pub fn sites(&self) -> usize {
        self.matrix.n
    }

    /// Largest `k` eigenvalues, descending.
    pub fn top_eigs(&self, k: usize) -> Result<Vec<f64>> {
        top_eigenvalues(&self.matrix, k, 1e-9)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // twice is enough
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            axpy(-c, b, v);
        }
    }
}

const MAX_RESTARTS: usize = 40;

/// Largest `k` eigenvalues of a sparse symmetric matrix. Each eigenvalue is
/// found by a restarted Lanczos run with full reorthogonalization, deflated
/// against the eigenvectors already locked, so repeated eigenvalues are
/// resolved.
pub fn top_eigenvalues(m: &SparseSym, k: usize, tol: f64) -> Result<Vec<f64>> {
    let n = m.n;
    if k == 0 {
        return Ok(Vec::new());
    }
    if k > n {
        return Err(invalid(format!("requested {k} eigenvalues of a {n}-dimensional operator")));
    }
    let scale = m.norm_bound().max(1e-300);
    // Krylov dimension limited by memory: about 1 GB of basis vectors
    let memory_cap = ((1usize << 27) / n.max(1)).clamp(2, 400);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut values = Vec::with_capacity(k);
    let mut w = vec![0.0; n];
    for _ in 0..k {
        let max_krylov = (n - locked.len()).min(memory_cap).max(1);
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut converged = false;
        let mut theta = f64::NAN;
        let mut resid = f64::INFINITY;
        for _restart in 0..MAX_RESTARTS {
            orthogonalize(&mut v, &locked);
            let nv = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= nv);
            let mut basis: Vec<Vec<f64>> = vec![std::mem::take(&mut v)];
            let mut alpha: Vec<f64> = Vec::new();
            let mut beta: Vec<f64> = Vec::new();
            let y = loop {
                let j = basis.len() - 1;
                m.apply(&basis[j], &mut w);
                let a = dot(&w, &basis[j]);
                alpha.push(a);
                orthogonalize(&mut w, &locked);
                orthogonalize(&mut w, &basis);
                let b = dot(&w, &w).sqrt();
                let size = alpha.len();
                let exhausted = b <= 1e-14 * scale || size >= max_krylov;
                if size % 5 == 0 || exhausted {
                    let (t, y) = top_ritz(&alpha, &beta);
                    // residual norm of the Ritz pair is |b * y_last|
                    theta = t;
                    resid = if b <= 1e-14 * scale { 0.0 } else { (b * y[size - 1]).abs() };
                    if resid <= tol * scale || exhausted {
                        break y;
                    }
                }
                beta.push(b);
                let inv = 1.0 / b;
                basis.push(w.iter().map(|x| x * inv).collect());
            };
            v = vec![0.0; n];
            for (yi, bi) in y.iter().zip(&basis) {
                axpy(*yi, bi, &mut v);
            }
            if resid <= tol * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NumericalDegeneracy(format!(
                "Lanczos did not converge: eigenvalue {theta}, residual {resid:e}"
            )));
        }
        orthogonalize(&mut v, &locked);
        let nv = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        locked.push(v);
        values.push(theta);
    }
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(values)
}

/// Number of eigenvalues of the tridiagonal `(alpha, beta)` below `x`.
fn sturm_count(alpha: &[f64], beta: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..alpha.len() {
        let b2 = if i == 0 { 0.0 } else { beta[i - 1] * beta[i - 1] };
        q = alpha[i] - x - if i == 0 { 0.0 } else { b2 / q };
        if q == 0.0 {
            q = -1e-300;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Largest eigenpair of the Lanczos tridiagonal: bisection on the Sturm
/// count, then inverse iteration for the vector.
fn top_ritz(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let m = alpha.len();
    let bound = (0..m)
        .map(|i| {
            alpha[i].abs()
                + if i > 0 { beta[i - 1].abs() } else { 0.0 }
                + if i + 1 < m { beta[i].abs() } else { 0.0 }
        })
        .fold(0.0, f64::max);
    let (mut lo, mut hi) = (-bound - 1.0, bound + 1.0);
    while hi - lo > 1e-15 * bound.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(alpha, beta, mid) == m {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    let shift = theta + 1e-13 * bound.max(1e-300);
    let mut y = vec![1.0; m];
    for _ in 0..3 {
        y = tridiagonal_solve(alpha, beta, shift, &y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        y.iter_mut().for_each(|v| *v /= norm);
    }
    (theta, y)
}

/// Solves `(T - shift I) y = rhs` by Gaussian elimination with partial
/// pivoting on the tridiagonal (the `gtsv` scheme).
fn tridiagonal_solve(alpha: &[f64], beta: &[f64], shift: f64, rhs: &[f64]) -> Vec<f64> {
    let n = alpha.len();
    let tiny = |v: f64| if v == 0.0 { 1e-300 } else { v };
    let mut d: Vec<f64> = alpha.iter().map(|a| a - shift).collect();
    let mut du: Vec<f64> = beta[..n - 1].to_vec();
    // sub-diagonal, then reused for the second super-diagonal
    let mut dl: Vec<f64> = beta[..n - 1].to_vec();
    let mut b = rhs.to_vec();
    for i in 0..n.saturating_sub(1) {
        if d[i].abs() >= dl[i].abs() {
            let fact = dl[i] / tiny(d[i]);
            d[i + 1] -= fact * du[i];
            b[i + 1] -= fact * b[i];
            dl[i] = 0.0;
        } else {
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            let temp = d[i + 1];
            d[i + 1] = du[i] - fact * temp;
            if i + 2 < n {
                dl[i] = du[i + 1];
                du[i + 1] = -fact * dl[i];
            } else {
                dl[i] = 0.0;
            }
            du[i] = temp;
            let tb = b[i];
            b[i] = b[i + 1];
            b[i + 1] = tb - fact * b[i + 1];
        }
    }
    let mut y = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = b[i];
        if i + 1 < n {
            v -= du[i] * y[i + 1];
        }
        if i + 2 < n {
            v -= dl[i] * y[i + 2];
        }
        y[i] = v / tiny(d[i]);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_round_trip() {
        let g = BoxGeometry::new(3, 2).unwrap();
        assert_eq!(g.sites(), 125);
        for i in [0, 17, 62, 124] {
            assert_eq!(g.index(&g.point(i)), Some(i));
        }
        assert_eq!(g.index(&LatticePoint::new(vec![3, 0, 0])), None);
        assert_eq!(g.index(&LatticePoint::origin(3)), Some(62));
        assert!(matches!(BoxGeometry::new(3, 100), Err(Error::BoxTooLarge(_))));
    }

    #[test]
    fn lanczos_on_path_laplacian() {
        // d = 1 simple walk on {-L..L}, absorbing: eigenvalues -1 + cos(pi j / (2L + 2))
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let s = SourceConfiguration::new(vec![LatticePoint::origin(1)], 0.0).unwrap();
        let op = TruncatedOperator::new(&k, &s, 0.0, 30).unwrap();
        let top = op.top_eigs(3).unwrap();
        let n = 61.0;
        for (j, v) in top.iter().enumerate() {
            let exact = -1.0 + (std::f64::consts::PI * (j as f64 + 1.0) / (n + 1.0)).cos();
            assert!((v - exact).abs() < 1e-8, "{j}: {v} vs {exact}");
        }
    }

    #[test]
    fn repeated_eigenvalues_are_found() {
        // diagonal matrix with a double top eigenvalue
        let n = 50;
        let mut diag: Vec<f64> = (0..n).map(|i| -(i as f64) / n as f64).collect();
        diag[7] = 2.0;
        diag[21] = 2.0;
        let m = SparseSym { n, row_ptr: vec![0; n + 1], cols: vec![], vals: vec![], diag };
        let top = top_eigenvalues(&m, 3, 1e-10).unwrap();
        assert!((top[0] - 2.0).abs() < 1e-10 && (top[1] - 2.0).abs() < 1e-10);
        assert!(top[2].abs() < 1e-10);
    }

    #[test]
    fn ritz_pair_of_small_tridiagonal() {
        let alpha = [2.0, -1.0, 0.5, 3.0];
        let beta = [1.0, 0.3, -0.7];
        let (theta, y) = top_ritz(&alpha, &beta);
        // residual of T y = theta y
        let ty = |i: usize| {
            let mut v = alpha[i] * y[i];
            if i > 0 {
                v += beta[i - 1] * y[i - 1];
            }
            if i + 1 < 4 {
                v += beta[i] * y[i + 1];
            }
            v
        };
        for i in 0..4 {
            assert!((ty(i) - theta * y[i]).abs() < 1e-12);
        }
        let mut t = vec![0.0; 16];
        for i in 0..4 {
            t[i * 4 + i] = alpha[i];
            if i < 3 {
                t[i * 4 + i + 1] = beta[i];
                t[(i + 1) * 4 + i] = beta[i];
            }
        }
        let (vals, _) = crate::gamma::jacobi(&t, 4);
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        assert!((theta - max).abs() < 1e-13);
    }

    #[test]
    fn sources_must_lie_in_box() {
        let k = JumpKernel::simple(2, 1.0).unwrap();
        let s = SourceConfiguration::new(vec![LatticePoint::new(vec![5, 0])], 1.0).unwrap();
        assert!(TruncatedOperator::new(&k, &s, 1.0, 4).is_err());
    }
}
