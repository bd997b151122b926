//! Closed forms for sources at `e_1, ..., e_N` under a kernel invariant
//! under coordinate permutations. With `z* = e_1 - e_2`,
//!
//! `beta_c = 1 / (G_0 + (N - 1) G_0(z*))`, `beta_c1 = 1 / (G_0 - G_0(z*))`,
//!
//! and `det(Gamma - I / beta)` factors into
//! `(G + (N - 1) G(z*) - 1/beta) (G - G(z*) - 1/beta)^(N - 1)`.

use crate::criticality::{extrapolate_to_zero, solve_decreasing};
use crate::error::{invalid, Result};
use crate::gamma::SourceConfiguration;
use crate::green::GreenSolver;
use crate::lattice::{JumpKernel, LatticePoint};
use serde::Serialize;

/// Roots at or below this are not counted as eigenvalues.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

/// `a(Rz) = a(z)` for every coordinate permutation `R`.
pub fn is_permutation_symmetric(kernel: &JumpKernel) -> bool {
    let d = kernel.dimension();
    // transpositions (0 i) generate the symmetric group
    kernel.entries().iter().all(|(z, r)| {
        (1..d).all(|i| {
            let mut w = z.coords().to_vec();
            w.swap(0, i);
            kernel.rate(&LatticePoint::new(w)) == *r
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplexConfiguration {
    pub dimension: usize,
    pub n: usize,
}

impl SimplexConfiguration {
    pub fn new(dimension: usize, n: usize) -> Result<Self> {
        if n == 0 || n > dimension {
            return Err(invalid(format!("simplex needs 1 <= N <= d, got N = {n}, d = {dimension}")));
        }
        Ok(Self { dimension, n })
    }

    pub fn sources(&self, beta: f64) -> Result<SourceConfiguration> {
        SourceConfiguration::simplex(self.dimension, self.n, beta)
    }

    pub fn z_star(&self) -> LatticePoint {
        let d = self.dimension;
        let mut c = vec![0i64; d];
        c[0] = 1;
        if d > 1 {
            c[1] = -1;
        }
        LatticePoint::new(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimplexBetas {
    pub beta_c: f64,
    pub beta_c1: f64,
    /// `G_0` and `G_0(z*)`; infinite when divergent.
    pub g0: f64,
    pub g0_zstar: f64,
    /// `beta_c1` came from small-`lambda` extrapolation.
    pub extrapolated: bool,
}

/// Both formulas from given Green values.
pub fn simplex_betas_from_values(g0: f64, g0_zstar: f64, n: usize) -> (f64, f64) {
    (1.0 / (g0 + (n as f64 - 1.0) * g0_zstar), 1.0 / (g0 - g0_zstar))
}

fn check(solver: &GreenSolver, cfg: &SimplexConfiguration) -> Result<()> {
    if solver.kernel().dimension() != cfg.dimension {
        return Err(invalid("simplex dimension does not match the kernel"));
    }
    if !is_permutation_symmetric(solver.kernel()) {
        return Err(invalid("kernel is not invariant under coordinate permutations"));
    }
    Ok(())
}

pub fn simplex_betas(solver: &GreenSolver, cfg: &SimplexConfiguration) -> Result<SimplexBetas> {
    check(solver, cfg)?;
    let d = cfg.dimension;
    let xs = [LatticePoint::origin(d), cfg.z_star()];
    if solver.zero_is_finite() {
        let v = solver.green_zero_many(&xs)?;
        let (beta_c, beta_c1) = simplex_betas_from_values(v[0].value, v[1].value, cfg.n);
        return Ok(SimplexBetas { beta_c, beta_c1, g0: v[0].value, g0_zstar: v[1].value, extrapolated: false });
    }
    let diff = |l: f64| -> Result<f64> {
        let v = solver.green_many(l, &xs)?;
        Ok(v[0].value - v[1].value)
    };
    let (limit, _) = extrapolate_to_zero(diff(1e-6)?, diff(1e-7)?, diff(1e-8)?);
    Ok(SimplexBetas {
        beta_c: 0.0,
        beta_c1: 1.0 / limit,
        g0: f64::INFINITY,
        g0_zstar: f64::INFINITY,
        extrapolated: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimplexLambdas {
    pub lambda0: Option<f64>,
    /// Root of the repeated factor, of multiplicity `N - 1`.
    pub lambda_rep: Option<f64>,
    pub multiplicity_rep: usize,
}

pub fn simplex_lambdas(solver: &GreenSolver, cfg: &SimplexConfiguration, beta: f64) -> Result<SimplexLambdas> {
    check(solver, cfg)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta must be positive, got {beta}")));
    }
    let xs = [LatticePoint::origin(cfg.dimension), cfg.z_star()];
    let m = cfg.n as f64 - 1.0;
    let pair = |l: f64| -> Result<(f64, f64)> {
        let v = solver.green_many(l, &xs)?;
        Ok((v[0].value, v[1].value))
    };
    let keep = |r: Option<f64>| r.filter(|&l| l > POSITIVITY_FLOOR);
    let lambda0 = keep(solve_decreasing(|l| pair(l).map(|(g, gz)| g + m * gz), 1.0 / beta)?);
    let lambda_rep = if cfg.n >= 2 {
        keep(solve_decreasing(|l| pair(l).map(|(g, gz)| g - gz), 1.0 / beta)?)
    } else {
        None
    };
    Ok(SimplexLambdas { lambda0, lambda_rep, multiplicity_rep: cfg.n - 1 })
}

/// Right-hand side of the determinant factorization at `lambda`.
pub fn factored_determinant(solver: &GreenSolver, cfg: &SimplexConfiguration, lambda: f64, beta: f64) -> Result<f64> {
    let xs = [LatticePoint::origin(cfg.dimension), cfg.z_star()];
    let v = solver.green_many(lambda, &xs)?;
    let (g, gz) = (v[0].value, v[1].value);
    let m = cfg.n as f64 - 1.0;
    Ok((g + m * gz - 1.0 / beta) * (g - gz - 1.0 / beta).powi(cfg.n as i32 - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Angular;

    #[test]
    fn permutation_symmetry_cases() {
        for d in 1..=4 {
            assert!(is_permutation_symmetric(&JumpKernel::simple(d, 1.0).unwrap()));
        }
        let e = |v: Vec<i64>| LatticePoint::new(v);
        let k = JumpKernel::from_rates(
            2,
            vec![(e(vec![1, 0]), 0.3), (e(vec![-1, 0]), 0.3), (e(vec![0, 1]), 0.2), (e(vec![0, -1]), 0.2)],
        )
        .unwrap();
        assert!(!is_permutation_symmetric(&k));
        let h = JumpKernel::heavy_tail(3, 1.2, Angular::Constant(1.0), 3).unwrap();
        assert!(is_permutation_symmetric(&h));
    }

    #[test]
    fn z_star_and_domain() {
        let c = SimplexConfiguration::new(3, 2).unwrap();
        assert_eq!(c.z_star(), LatticePoint::new(vec![1, -1, 0]));
        assert!(SimplexConfiguration::new(2, 3).is_err());
    }

    #[test]
    fn formula_decreases_in_n() {
        let (g0, gz) = (1.516, 0.33);
        let b: Vec<f64> = [2, 5, 10].iter().map(|&n| simplex_betas_from_values(g0, gz, n).0).collect();
        assert!(b[0] > b[1] && b[1] > b[2]);
        let c1: Vec<f64> = [2, 5, 10].iter().map(|&n| simplex_betas_from_values(g0, gz, n).1).collect();
        assert!(c1.iter().all(|&x| x == c1[0]));
    }

    #[test]
    fn rejects_asymmetric_kernel() {
        let e = |v: Vec<i64>| LatticePoint::new(v);
        let k = JumpKernel::from_rates(
            2,
            vec![(e(vec![1, 0]), 0.3), (e(vec![-1, 0]), 0.3), (e(vec![0, 1]), 0.2), (e(vec![0, -1]), 0.2)],
        )
        .unwrap();
        let s = GreenSolver::new(&k);
        assert!(simplex_betas(&s, &SimplexConfiguration::new(2, 2).unwrap()).is_err());
    }
}
