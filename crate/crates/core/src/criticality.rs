//! Positive eigenvalues `lambda_i(beta)` from `gamma_i(lambda) beta = 1`,
//! the critical intensities and the spectral-gap bounds.

use crate::error::{invalid, Error, Result};
use crate::gamma::{build_gamma, eigenvalues, eigs, EigenDecomposition, GammaMatrix, SourceConfiguration};
use crate::green::GreenSolver;
use crate::lattice::JumpKernel;
use crate::quadrature::composite;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

/// Smallest `lambda` at which `gamma_i(0+)` is sampled.
pub const LAMBDA_FLOOR: f64 = 1e-8;
/// Upper limit of the bracket search.
pub const LAMBDA_CEILING: f64 = 1e12;
/// Roots closer than this (relative) are one eigenvalue.
pub const MULTIPLICITY_RTOL: f64 = 1e-7;
pub const RESIDUAL_TOL: f64 = 1e-7;

/// Root of a positive decreasing `f` with `f(lambda) = target`, searched
/// on `[LAMBDA_FLOOR, LAMBDA_CEILING]`. `None` if `f(LAMBDA_FLOOR) <= target`.
pub fn solve_decreasing<F>(mut f: F, target: f64) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<f64>,
{
    let flo = f(LAMBDA_FLOOR)?;
    if !(flo > target) {
        return Ok(None);
    }
    // work with u = ln lambda and g = ln f - ln target
    let g = |v: f64| v.ln() - target.ln();
    let (mut a, mut ga) = (LAMBDA_FLOOR.ln(), g(flo));
    let mut hi = 1.0f64;
    let mut fhi = f(hi)?;
    if fhi > target {
        loop {
            a = hi.ln();
            ga = g(fhi);
            hi *= 4.0;
            if hi > LAMBDA_CEILING {
                return Err(Error::SolverOverflow(hi));
            }
            fhi = f(hi)?;
            if fhi <= target {
                break;
            }
        }
    }
    let (mut b, mut gb) = (hi.ln(), g(fhi));
    if gb == 0.0 {
        return Ok(Some(hi));
    }
    // Illinois iteration on the bracket [a, b], ga > 0 > gb
    let mut side = 0i8;
    for _ in 0..200 {
        let (la, lb) = (a.exp(), b.exp());
        if lb - la < 1e-10 * (1.0 + la) {
            break;
        }
        let mut c = b - gb * (b - a) / (gb - ga);
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let gc = g(f(c.exp())?);
        if gc == 0.0 {
            return Ok(Some(c.exp()));
        }
        if gc > 0.0 {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
    }
    let (la, lb) = (a.exp(), b.exp());
    Ok(Some(0.5 * (la + lb)))
}

/// Fits `g(lambda) = L + c lambda^p` through three samples at
/// `lambda = 1e-6, 1e-7, 1e-8` and returns `(L, extrapolated)`.
/// Falls back to the smallest-`lambda` sample when the differences are at
/// noise level or not geometrically shrinking.
pub fn extrapolate_to_zero(g6: f64, g7: f64, g8: f64) -> (f64, bool) {
    let d1 = g6 - g7;
    let d2 = g7 - g8;
    let noise = 1e-11 * g8.abs().max(1e-300);
    if d2.abs() <= noise || d1.abs() <= noise || d1.signum() != d2.signum() {
        return (g8, false);
    }
    let r = d2 / d1;
    if !(r > 0.0 && r < 0.95) {
        return (g8, false);
    }
    (g8 - d2 * r / (1.0 - r), true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenvalueEntry {
    pub value: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumResult {
    pub beta: f64,
    /// Descending distinct values.
    pub eigenvalues: Vec<EigenvalueEntry>,
    pub total_count: usize,
    pub perron_simple: bool,
}

impl SpectrumResult {
    pub fn lambda0(&self) -> Option<f64> {
        self.eigenvalues.first().map(|e| e.value)
    }
}

/// `beta_c1`, which may be infinite when `gamma_1(0)` vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaC1 {
    Finite(f64),
    Unbounded,
}

impl BetaC1 {
    pub fn value(&self) -> f64 {
        match self {
            BetaC1::Finite(v) => *v,
            BetaC1::Unbounded => f64::INFINITY,
        }
    }
}

impl Serialize for BetaC1 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BetaC1::Finite(v) => s.serialize_f64(*v),
            BetaC1::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

/// `gamma_1(0)`, taken from `Gamma(0)` when `G_0` is finite and extrapolated
/// from small `lambda` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaAtZero {
    pub value: f64,
    pub extrapolated: bool,
}

/// A bound on `gamma_1(0)` together with the value it bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapBound {
    pub bound: f64,
    pub gamma1: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bounds {
    pub hopf: Option<f64>,
    pub cstar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalIntensities {
    pub beta_c: f64,
    /// Absent for a single source.
    pub beta_c1: Option<BetaC1>,
    pub gamma1_extrapolated: bool,
    pub gap_bound_gamma_star: Option<f64>,
}

/// Record written for spectrum and critical-intensity queries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub beta: f64,
    pub eigenvalues: Vec<EigenvalueEntry>,
    pub beta_c: f64,
    pub beta_c1: Option<BetaC1>,
    pub bounds: Bounds,
}

/// A kernel with a fixed source set. Eigenvalues of `Gamma(lambda)` are
/// cached per `lambda`, so repeated root solves share quadrature work.
pub struct SpectralProblem {
    solver: Arc<GreenSolver>,
    sources: SourceConfiguration,
    cache: Mutex<HashMap<u64, Arc<Vec<f64>>>>,
}

impl std::fmt::Debug for SpectralProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralProblem").field("sources", &self.sources).finish()
    }
}

impl SpectralProblem {
    pub fn new(kernel: &JumpKernel, sources: SourceConfiguration) -> Result<Self> {
        Self::with_solver(Arc::new(GreenSolver::new(kernel)), sources)
    }

    pub fn with_solver(solver: Arc<GreenSolver>, sources: SourceConfiguration) -> Result<Self> {
        if solver.kernel().dimension() != sources.dim() {
            return Err(invalid("source dimension does not match the kernel"));
        }
        Ok(Self { solver, sources, cache: Mutex::new(HashMap::new()) })
    }

    pub fn solver(&self) -> &Arc<GreenSolver> {
        &self.solver
    }

    pub fn sources(&self) -> &SourceConfiguration {
        &self.sources
    }

    pub fn n(&self) -> usize {
        self.sources.len()
    }

    pub fn gamma_matrix(&self, lambda: f64) -> Result<GammaMatrix> {
        build_gamma(&self.solver, &self.sources, lambda)
    }

    /// Full decomposition with the Perron vector check.
    pub fn eigen(&self, lambda: f64) -> Result<EigenDecomposition> {
        eigs(&self.gamma_matrix(lambda)?)
    }

    /// `gamma_0(lambda) >= ... >= gamma_{N-1}(lambda)`, cached.
    pub fn gammas(&self, lambda: f64) -> Result<Arc<Vec<f64>>> {
        let key = lambda.to_bits();
        if let Some(e) = self.cache.lock().unwrap().get(&key) {
            return Ok(e.clone());
        }
        let e = Arc::new(eigenvalues(&self.gamma_matrix(lambda)?)?);
        self.cache.lock().unwrap().insert(key, e.clone());
        Ok(e)
    }

    /// `gamma_i(lambda)`.
    pub fn gamma_i(&self, lambda: f64, i: usize) -> Result<f64> {
        Ok(self.gammas(lambda)?[i])
    }

    /// Root of `gamma_i(lambda) beta = 1`, if any.
    pub fn solve_lambda_i(&self, beta: f64, i: usize) -> Result<Option<f64>> {
        if i >= self.n() {
            return Err(invalid(format!("branch {i} out of range for N = {}", self.n())));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid(format!("beta must be positive, got {beta}")));
        }
        let root = solve_decreasing(|l| self.gamma_i(l, i), 1.0 / beta)?;
        if let Some(l) = root {
            let r = (self.gamma_i(l, i)? * beta - 1.0).abs();
            if r >= RESIDUAL_TOL {
                return Err(Error::InternalConsistency(format!(
                    "branch {i}: residual {r:e} at lambda = {l}"
                )));
            }
        }
        Ok(root)
    }

    pub fn spectrum(&self, beta: f64) -> Result<SpectrumResult> {
        let roots: Vec<Result<Option<f64>>> =
            (0..self.n()).into_par_iter().map(|i| self.solve_lambda_i(beta, i)).collect();
        // branch roots are ordered because the gamma_i are
        let mut found: Vec<(usize, f64)> = Vec::new();
        for (i, r) in roots.into_iter().enumerate() {
            if let Some(v) = r? {
                found.push((i, v));
            }
        }
        let mut eigenvalues: Vec<EigenvalueEntry> = Vec::new();
        let mut prev: Option<(usize, f64)> = None;
        for (i, v) in found {
            let merge = match prev {
                Some((j, u)) if (u - v).abs() < MULTIPLICITY_RTOL * u.abs().max(v.abs()) => {
                    !self.branches_separated(u, j, i)?
                }
                _ => false,
            };
            if merge {
                eigenvalues.last_mut().unwrap().multiplicity += 1;
            } else {
                eigenvalues.push(EigenvalueEntry { value: v, multiplicity: 1 });
            }
            prev = Some((i, v));
        }
        let total_count: usize = eigenvalues.iter().map(|e| e.multiplicity).sum();
        if total_count > self.n() {
            return Err(Error::InternalConsistency(format!(
                "{total_count} eigenvalues for {} sources",
                self.n()
            )));
        }
        let perron_simple = eigenvalues.first().map_or(true, |e| e.multiplicity == 1);
        if !perron_simple {
            return Err(Error::InternalConsistency(
                "leading eigenvalue grouped with a lower branch".into(),
            ));
        }
        Ok(SpectrumResult { beta, eigenvalues, total_count, perron_simple })
    }

    /// Whether `gamma_i` and `gamma_j` differ at `lambda` by more than the
    /// quadrature noise, which keeps nearly equal roots apart.
    fn branches_separated(&self, lambda: f64, i: usize, j: usize) -> Result<bool> {
        let g = self.gamma_matrix(lambda)?;
        let e = self.gammas(lambda)?;
        let n = self.n() as f64;
        let noise = 2.0 * n * g.entry_error + 16.0 * n * f64::EPSILON * e[0].abs();
        Ok((e[i] - e[j]).abs() > noise)
    }

    pub fn beta_c(&self) -> Result<f64> {
        if !self.solver.zero_is_finite() {
            return Ok(0.0);
        }
        Ok(1.0 / self.gammas(0.0)?[0])
    }

    pub fn gamma1_at_zero(&self) -> Result<GammaAtZero> {
        if self.n() < 2 {
            return Err(invalid("gamma_1 needs at least two sources"));
        }
        if self.solver.zero_is_finite() {
            return Ok(GammaAtZero { value: self.gammas(0.0)?[1], extrapolated: false });
        }
        let g6 = self.gamma_i(1e-6, 1)?;
        let g7 = self.gamma_i(1e-7, 1)?;
        let g8 = self.gamma_i(1e-8, 1)?;
        let (value, extrapolated) = extrapolate_to_zero(g6, g7, g8);
        Ok(GammaAtZero { value, extrapolated })
    }

    pub fn beta_c1(&self) -> Result<BetaC1> {
        let g1 = self.gamma1_at_zero()?.value;
        if g1 <= 1e-14 {
            Ok(BetaC1::Unbounded)
        } else {
            Ok(BetaC1::Finite(1.0 / g1))
        }
    }

    pub fn critical_intensities(&self) -> Result<CriticalIntensities> {
        let beta_c = self.beta_c()?;
        if self.n() < 2 {
            return Ok(CriticalIntensities {
                beta_c,
                beta_c1: None,
                gamma1_extrapolated: false,
                gap_bound_gamma_star: None,
            });
        }
        let g1 = self.gamma1_at_zero()?;
        let beta_c1 = if g1.value <= 1e-14 { BetaC1::Unbounded } else { BetaC1::Finite(1.0 / g1.value) };
        let star = if self.solver.zero_is_finite() {
            Some(gap_bound_hopf(&self.gamma_matrix(0.0)?)?.bound)
        } else {
            self.gap_bound_cstar().ok().map(|b| b.bound)
        };
        Ok(CriticalIntensities {
            beta_c,
            beta_c1: Some(beta_c1),
            gamma1_extrapolated: g1.extrapolated,
            gap_bound_gamma_star: star,
        })
    }

    /// `(N - 1) C*` with `C* = max |x_j - x_i|^2 / (2 c1 (2 pi)^d) int |theta|^(2 - alpha)`.
    pub fn gap_bound_cstar(&self) -> Result<GapBound> {
        let kernel = self.solver.kernel();
        let d = kernel.dimension();
        let alpha = kernel.variance_class().exponent();
        let (c1, _) = self.solver.symbol().alpha_bounds()?;
        let n = self.n();
        let dist2 = self.sources.max_distance_sq() as f64;
        let cstar = dist2 / (2.0 * c1 * (2.0 * PI).powi(d as i32)) * cube_power_integral(d, 2.0 - alpha);
        let bound = (n as f64 - 1.0) * cstar;
        let gamma1 = if n >= 2 { self.gamma1_at_zero()?.value } else { 0.0 };
        Ok(GapBound { bound, gamma1, holds: gamma1 <= bound * (1.0 + 1e-3) })
    }

    pub fn report(&self, beta: f64) -> Result<SpectrumReport> {
        let spectrum = self.spectrum(beta)?;
        let crit = self.critical_intensities()?;
        let hopf = if self.n() >= 2 && self.solver.zero_is_finite() {
            Some(gap_bound_hopf(&self.gamma_matrix(0.0)?)?.bound)
        } else {
            None
        };
        let cstar = if self.n() >= 2 { self.gap_bound_cstar().ok().map(|b| b.bound) } else { None };
        Ok(SpectrumReport {
            beta,
            eigenvalues: spectrum.eigenvalues,
            beta_c: crit.beta_c,
            beta_c1: crit.beta_c1,
            bounds: Bounds { hopf, cstar },
        })
    }
}

/// `(M - m) / (M + m) gamma_0(0)` for the matrix `Gamma(0)`.
pub fn gap_bound_hopf(gamma_at_zero: &GammaMatrix) -> Result<GapBound> {
    if gamma_at_zero.entries.iter().any(|x| !x.is_finite()) {
        return Err(Error::DivergentGreen);
    }
    let big = gamma_at_zero.max_entry();
    let small = gamma_at_zero.min_entry();
    if big == small {
        return Err(Error::DegenerateInput("all entries of Gamma(0) are equal".into()));
    }
    let e = eigs(gamma_at_zero)?;
    let bound = (big - small) / (big + small) * e.gammas[0];
    let gamma1 = if e.gammas.len() > 1 { e.gammas[1] } else { 0.0 };
    let tol = 1e-3 * bound + 2.0 * gamma_at_zero.n as f64 * gamma_at_zero.entry_error;
    Ok(GapBound { bound, gamma1, holds: gamma1 <= bound + tol })
}

/// `int_{[-pi, pi]^d} |theta|^p dtheta` for `p >= 0`.
pub fn cube_power_integral(d: usize, p: f64) -> f64 {
    if d == 1 {
        return 2.0 * PI.powf(p + 1.0) / (p + 1.0);
    }
    if p == 0.0 {
        return (2.0 * PI).powi(d as i32);
    }
    // per-axis rule on [0, pi], geometrically graded towards 0
    let mut axis = Vec::new();
    let mut hi = PI;
    for _ in 0..10 {
        let lo = hi * 0.25;
        axis.extend(composite(lo, hi, 1, 10));
        hi = lo;
    }
    axis.extend(composite(0.0, hi, 1, 10));
    let m = axis.len();
    let total = m.pow(d as u32);
    let sum: f64 = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let (mut r2, mut w) = (0.0, 1.0);
            for _ in 0..d {
                let (x, wx) = axis[idx % m];
                idx /= m;
                r2 += x * x;
                w *= wx;
            }
            w * r2.powf(0.5 * p)
        })
        .sum();
    sum * 2f64.powi(d as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticePoint;

    #[test]
    fn solver_on_closed_form_curve() {
        // f = 1 / (1 + lambda): root of f = t is 1/t - 1
        for &t in &[0.9, 0.5, 1e-3, 1e-9] {
            let r = solve_decreasing(|l| Ok(1.0 / (1.0 + l)), t).unwrap().unwrap();
            let exact = 1.0 / t - 1.0;
            assert!((r - exact).abs() < 1e-9 * (1.0 + exact), "t={t}: {r}");
        }
        assert_eq!(solve_decreasing(|l| Ok(1.0 / (1.0 + l)), 1.5).unwrap(), None);
        assert!(matches!(
            solve_decreasing(|l| Ok(1.0 / (1.0 + l)), 1e-13),
            Err(Error::SolverOverflow(_))
        ));
    }

    #[test]
    fn extrapolation_recovers_power_law_limit() {
        let g = |l: f64| 2.0 - 3.0 * l.sqrt();
        let (v, e) = extrapolate_to_zero(g(1e-6), g(1e-7), g(1e-8));
        assert!(e && (v - 2.0).abs() < 1e-12);
        let (v, e) = extrapolate_to_zero(1.0, 1.0, 1.0);
        assert!(!e && v == 1.0);
    }

    #[test]
    fn cube_integral_values() {
        assert!((cube_power_integral(2, 0.0) - 4.0 * PI * PI).abs() < 1e-12);
        // int over [-pi,pi]^2 of |theta|^2 = 2 * (2 pi) * (2 pi^3 / 3)
        let exact = 2.0 * 2.0 * PI * (2.0 * PI.powi(3) / 3.0);
        assert!((cube_power_integral(2, 2.0) - exact).abs() < 1e-10 * exact);
        let exact3 = 3.0 * (2.0 * PI).powi(2) * (2.0 * PI.powi(3) / 3.0);
        assert!((cube_power_integral(3, 2.0) - exact3).abs() < 1e-10 * exact3);
        assert!((cube_power_integral(1, 1.5) - 2.0 * PI.powf(2.5) / 2.5).abs() < 1e-14);
    }

    #[test]
    fn single_source_in_three_dimensions() {
        let k = JumpKernel::simple(3, 1.0).unwrap();
        let p = SpectralProblem::new(&k, SourceConfiguration::new(vec![LatticePoint::origin(3)], 1.0).unwrap()).unwrap();
        let bc = p.beta_c().unwrap();
        assert!((bc - 1.0 / 1.516_386_059_151_978).abs() < 1e-8);
        let beta = 2.0 * bc;
        let l0 = p.solve_lambda_i(beta, 0).unwrap().unwrap();
        let g = p.solver().green(l0, &LatticePoint::origin(3)).unwrap().value;
        assert!((g * beta - 1.0).abs() < 1e-8);
        assert_eq!(p.solve_lambda_i(0.5 * bc, 0).unwrap(), None);
        assert!(p.beta_c1().is_err());
        assert!(p.spectrum(0.5 * bc).unwrap().eigenvalues.is_empty());
    }

    #[test]
    fn two_dimensional_beta_c_is_zero() {
        let k = JumpKernel::simple(2, 1.0).unwrap();
        let s = SourceConfiguration::simplex(2, 2, 1.0).unwrap();
        assert_eq!(SpectralProblem::new(&k, s).unwrap().beta_c().unwrap(), 0.0);
    }

    #[test]
    fn hopf_bound_saturates_for_two_sources() {
        let g = GammaMatrix::from_entries(0.0, 2, vec![1.5, 0.4, 0.4, 1.5], 0.0).unwrap();
        let b = gap_bound_hopf(&g).unwrap();
        assert!((b.bound - 1.1).abs() < 1e-14 && b.holds);
        let flat = GammaMatrix::from_entries(0.0, 2, vec![1.0; 4], 0.0).unwrap();
        assert!(matches!(gap_bound_hopf(&flat), Err(Error::DegenerateInput(_))));
    }
}
