//! The source matrix `Gamma(lambda)` and its eigendecomposition.

use crate::error::{invalid, Error, Result};
use crate::green::GreenSolver;
use crate::lattice::{fmt17, JumpKernel, LatticePoint};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

/// `N` distinct sources of common intensity `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfiguration {
    points: Vec<LatticePoint>,
    beta: f64,
}

impl SourceConfiguration {
    pub fn new(points: Vec<LatticePoint>, beta: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("at least one source is required"));
        }
        let d = points[0].dim();
        if d == 0 {
            return Err(invalid("sources must have positive dimension"));
        }
        if points.iter().any(|p| p.dim() != d) {
            return Err(invalid("sources have mixed dimensions"));
        }
        let mut seen = HashSet::new();
        for p in &points {
            if !seen.insert(p.clone()) {
                return Err(invalid(format!("duplicate source {p}")));
            }
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(invalid(format!("beta must be finite and nonnegative, got {beta}")));
        }
        Ok(Self { points, beta })
    }

    /// Sources at `e_1, ..., e_n` in `Z^d`.
    pub fn simplex(d: usize, n: usize, beta: f64) -> Result<Self> {
        if n == 0 || n > d {
            return Err(invalid(format!("simplex needs 1 <= N <= d, got N = {n}, d = {d}")));
        }
        Self::new((0..n).map(|i| LatticePoint::unit(d, i)).collect(), beta)
    }

    pub fn points(&self) -> &[LatticePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.points.clone(), beta)
    }

    /// Largest squared distance between two sources.
    pub fn max_distance_sq(&self) -> i64 {
        let mut m = 0;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                m = m.max(a.sub(b).norm_sq());
            }
        }
        m
    }
}

/// `Gamma_ij(lambda) = G_lambda(x_j - x_i)`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaMatrix {
    pub lambda: f64,
    pub n: usize,
    pub entries: Vec<f64>,
    /// Largest quadrature error estimate among the entries.
    pub entry_error: f64,
}

impl GammaMatrix {
    pub fn from_entries(lambda: f64, n: usize, entries: Vec<f64>, entry_error: f64) -> Result<Self> {
        if entries.len() != n * n {
            return Err(invalid("entry count does not match N x N"));
        }
        Ok(Self { lambda, n, entries, entry_error })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.entries.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// `v^T Gamma v / v^T v`.
    pub fn rayleigh(&self, v: &[f64]) -> f64 {
        let n = self.n;
        let mut num = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| self.get(i, j) * v[j]).sum();
            num += v[i] * row;
        }
        num / v.iter().map(|x| x * x).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenDecomposition {
    /// Descending.
    pub gammas: Vec<f64>,
    /// Unit eigenvector of `gammas[0]`, all coordinates positive.
    pub perron_vector: Vec<f64>,
}

/// Key identifying displacements whose Green values coincide by symmetry.
fn displacement_key(x: &LatticePoint, hyperoctahedral: bool) -> Vec<i64> {
    if hyperoctahedral {
        x.hyperoctahedral_key()
    } else {
        x.canonical_sign().coords().to_vec()
    }
}

/// True when the rates are invariant under coordinate permutations and
/// sign changes of single coordinates.
pub fn is_hyperoctahedral(kernel: &JumpKernel) -> bool {
    let d = kernel.dimension();
    kernel.entries().iter().all(|(z, r)| {
        let c = z.coords();
        let flips = (0..d).all(|i| {
            let mut w = c.to_vec();
            w[i] = -w[i];
            kernel.rate(&LatticePoint::new(w)) == *r
        });
        let swaps = (1..d).all(|i| {
            let mut w = c.to_vec();
            w.swap(0, i);
            kernel.rate(&LatticePoint::new(w)) == *r
        });
        flips && swaps
    })
}

/// Builds `Gamma(lambda)`, integrating each displacement class once.
/// `lambda = 0` requires a finite `G_0`.
pub fn build_gamma(
    solver: &GreenSolver,
    sources: &SourceConfiguration,
    lambda: f64,
) -> Result<GammaMatrix> {
    if sources.dim() != solver.kernel().dimension() {
        return Err(invalid("source dimension does not match the kernel"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    if lambda == 0.0 && !solver.zero_is_finite() {
        return Err(Error::DivergentGreen);
    }
    let hyper = is_hyperoctahedral(solver.kernel());
    let pts = sources.points();
    let n = pts.len();
    let mut classes: BTreeMap<Vec<i64>, (usize, LatticePoint)> = BTreeMap::new();
    let mut index = vec![0usize; n * n];
    for i in 0..n {
        for j in 0..n {
            let x = pts[j].sub(&pts[i]);
            let key = displacement_key(&x, hyper);
            let next = classes.len();
            let slot = classes.entry(key).or_insert((next, x)).0;
            index[i * n + j] = slot;
        }
    }
    let mut reps: Vec<(usize, LatticePoint)> = classes.into_values().collect();
    reps.sort_by_key(|r| r.0);
    let reps: Vec<LatticePoint> = reps.into_iter().map(|r| r.1).collect();
    let values = if lambda == 0.0 {
        solver.green_zero_many(&reps)?
    } else {
        solver.green_many(lambda, &reps)?
    };
    let entries = index.iter().map(|&s| values[s].value).collect();
    let entry_error = values.iter().map(|v| v.estimated_abs_error).fold(0.0, f64::max);
    Ok(GammaMatrix { lambda, n, entries, entry_error })
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns
/// eigenvalues in input order of convergence and eigenvectors as columns of
/// a row-major matrix.
pub fn jacobi(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |a: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    for _sweep in 0..100 {
        if off(&a) <= 1e-13 * norm {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

pub const MAX_SOURCES: usize = 256;

/// Eigenvalues of `Gamma` in descending order, without the Perron check.
pub fn eigenvalues(gamma: &GammaMatrix) -> Result<Vec<f64>> {
    if gamma.n > MAX_SOURCES {
        return Err(invalid(format!("at most {MAX_SOURCES} sources are supported")));
    }
    if gamma.entries.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalDegeneracy("Gamma has non-finite entries".into()));
    }
    let (mut vals, _) = jacobi(&gamma.entries, gamma.n);
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(vals)
}

/// Eigenvalues of `Gamma` in descending order and its Perron vector.
pub fn eigs(gamma: &GammaMatrix) -> Result<EigenDecomposition> {
    let n = gamma.n;
    if n > MAX_SOURCES {
        return Err(invalid(format!("at most {MAX_SOURCES} sources are supported")));
    }
    if gamma.entries.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalDegeneracy("Gamma has non-finite entries".into()));
    }
    let (vals, vecs) = jacobi(&gamma.entries, n);
    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep the lower index first
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap());
    let gammas: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let top = order[0];
    let mut perron: Vec<f64> = (0..n).map(|k| vecs[k * n + top]).collect();
    if perron.iter().sum::<f64>() < 0.0 {
        perron.iter_mut().for_each(|x| *x = -*x);
    }
    let norm = perron.iter().map(|x| x * x).sum::<f64>().sqrt();
    perron.iter_mut().for_each(|x| *x /= norm);
    if perron.iter().any(|&x| x <= 0.0) {
        return Err(Error::NumericalDegeneracy(format!(
            "Perron vector at lambda = {} has a nonpositive coordinate",
            gamma.lambda
        )));
    }
    Ok(EigenDecomposition { gammas, perron_vector: perron })
}

/// `gamma_i(lambda)` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaCurve {
    pub lambdas: Vec<f64>,
    /// `rows[k][i] = gamma_i(lambdas[k])`
    pub rows: Vec<Vec<f64>>,
}

impl GammaCurve {
    pub fn to_csv(&self) -> String {
        let n = self.rows.first().map_or(0, |r| r.len());
        let mut out = String::from("lambda");
        for i in 0..n {
            out.push_str(&format!(",gamma_{i}"));
        }
        out.push('\n');
        for (l, row) in self.lambdas.iter().zip(&self.rows) {
            out.push_str(&fmt17(*l));
            for g in row {
                out.push(',');
                out.push_str(&fmt17(*g));
            }
            out.push('\n');
        }
        out
    }
}

pub fn gamma_curve(
    solver: &GreenSolver,
    sources: &SourceConfiguration,
    lambdas: &[f64],
) -> Result<GammaCurve> {
    if lambdas.is_empty() {
        return Err(invalid("lambda grid is empty"));
    }
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("lambda grid must be strictly increasing"));
    }
    if !(lambdas[0] > 0.0) {
        return Err(invalid("lambda grid must be positive"));
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        rows.push(eigs(&build_gamma(solver, sources, l)?)?.gammas);
    }
    Ok(GammaCurve { lambdas: lambdas.to_vec(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Angular;

    #[test]
    fn configuration_validation() {
        assert!(SourceConfiguration::new(vec![], 1.0).is_err());
        let a = LatticePoint::new(vec![1, 0]);
        assert!(SourceConfiguration::new(vec![a.clone(), a.clone()], 1.0).is_err());
        assert!(SourceConfiguration::new(vec![a.clone(), LatticePoint::new(vec![1])], 1.0).is_err());
        assert!(SourceConfiguration::new(vec![a.clone()], -1.0).is_err());
        assert!(SourceConfiguration::simplex(2, 3, 1.0).is_err());
        let s = SourceConfiguration::simplex(3, 3, 0.5).unwrap();
        assert_eq!(s.max_distance_sq(), 2);
    }

    #[test]
    fn two_by_two_exchange() {
        let g = GammaMatrix::from_entries(1.0, 2, vec![3.0, 1.0, 1.0, 3.0], 0.0).unwrap();
        let e = eigs(&g).unwrap();
        assert!((e.gammas[0] - 4.0).abs() < 1e-14);
        assert!((e.gammas[1] - 2.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(e.perron_vector.iter().all(|x| (x - h).abs() < 1e-14));
    }

    #[test]
    fn one_by_one() {
        let g = GammaMatrix::from_entries(1.0, 1, vec![0.7], 0.0).unwrap();
        let e = eigs(&g).unwrap();
        assert_eq!(e.gammas, vec![0.7]);
        assert_eq!(e.perron_vector, vec![1.0]);
    }

    #[test]
    fn structure_and_dedup() {
        let k = JumpKernel::simple(3, 1.0).unwrap();
        let solver = GreenSolver::new(&k);
        let s = SourceConfiguration::new(
            vec![LatticePoint::new(vec![0, 0, 0]), LatticePoint::new(vec![1, 0, 0]), LatticePoint::new(vec![2, 0, 0])],
            1.0,
        )
        .unwrap();
        let g = build_gamma(&solver, &s, 0.3).unwrap();
        assert!(g.is_symmetric());
        assert_eq!(g.get(0, 0), g.get(2, 2));
        assert_eq!(g.get(0, 1), g.get(1, 2));
        assert!(g.get(0, 2) < g.get(0, 1) && g.get(0, 1) < g.get(0, 0));
        let direct = solver.green(0.3, &LatticePoint::new(vec![0, 2, 0])).unwrap().value;
        assert!((direct - g.get(0, 2)).abs() < 1e-10);
        assert!(build_gamma(&solver, &s, -1.0).is_err());
        let k2 = JumpKernel::simple(2, 1.0).unwrap();
        let s2 = SourceConfiguration::simplex(2, 2, 1.0).unwrap();
        assert_eq!(build_gamma(&GreenSolver::new(&k2), &s2, 0.0), Err(Error::DivergentGreen));
    }

    #[test]
    fn symmetry_detection() {
        assert!(is_hyperoctahedral(&JumpKernel::simple(3, 2.0).unwrap()));
        let k = JumpKernel::heavy_tail(2, 1.0, Angular::Constant(1.0), 4).unwrap();
        assert!(is_hyperoctahedral(&k));
        let e = |v: Vec<i64>| LatticePoint::new(v);
        let k = JumpKernel::from_rates(
            2,
            vec![(e(vec![1, 0]), 0.3), (e(vec![-1, 0]), 0.3), (e(vec![0, 1]), 0.2), (e(vec![0, -1]), 0.2)],
        )
        .unwrap();
        assert!(!is_hyperoctahedral(&k));
    }

    #[test]
    fn curve_rejects_bad_grids() {
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let solver = GreenSolver::new(&k);
        let s = SourceConfiguration::new(vec![LatticePoint::origin(1)], 1.0).unwrap();
        assert!(gamma_curve(&solver, &s, &[1.0, 0.5]).is_err());
        assert!(gamma_curve(&solver, &s, &[0.0, 0.5]).is_err());
        let c = gamma_curve(&solver, &s, &[0.1, 1.0, 10.0]).unwrap();
        let csv = c.to_csv();
        assert!(csv.starts_with("lambda,gamma_0\n"));
        assert_eq!(csv.lines().count(), 4);
        assert!(c.rows[0][0] > c.rows[1][0] && c.rows[1][0] > c.rows[2][0]);
    }
}
