//! Semigroup actions on the truncated box by uniformization:
//! `exp(t Q) v = sum_k Poisson(k; Lambda t) P^k v` with `P = I + Q / Lambda`.

use super::lattice_box::{SparseSym, TruncatedOperator};
use crate::error::{invalid, Error, Result};
use crate::gamma::SourceConfiguration;
use crate::lattice::{JumpKernel, LatticePoint};
use serde::Serialize;

/// Largest `Lambda t` accepted by a single uniformization series.
pub const MAX_SERIES_LENGTH: f64 = 1e4;
const POISSON_TAIL: f64 = 1e-12;

/// Applies `exp(t A)` to `v` for a symmetric `A` with `A + shift I >= 0`
/// entrywise, as `exp(-shift t) sum_k (t (A + shift I))^k / k! v`.
fn expm_action(a: &SparseSym, shift: f64, t: f64, v: &[f64]) -> Result<Vec<f64>> {
    let rate = a.shifted_row_sum(shift).max(1e-300);
    if rate * t > MAX_SERIES_LENGTH {
        return Err(Error::SeriesTooLong(rate * t));
    }
    let n = a.n;
    let mut term = v.to_vec();
    let mut out = v.to_vec();
    let mut tmp = vec![0.0; n];
    // terms are bounded by Poisson(k; rate t) |v|; stop once the Poisson tail is negligible
    let mean = rate * t;
    let mut k = 0usize;
    let mut log_w = -mean;
    let mut cum = log_w.exp();
    let mut scale = 1.0;
    loop {
        k += 1;
        a.apply(&term, &mut tmp);
        for (ti, xi) in tmp.iter_mut().zip(&term) {
            *ti += shift * xi;
        }
        let f = t / k as f64;
        for (ti, xi) in term.iter_mut().zip(&tmp) {
            *ti = xi * f;
        }
        // rescale to keep magnitudes moderate; undone at the end
        let m = term.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if m > 1e200 {
            term.iter_mut().for_each(|x| *x *= 1e-200);
            out.iter_mut().for_each(|x| *x *= 1e-200);
            scale *= 1e200;
        }
        axpy(&term, &mut out);
        log_w += (mean).ln() - (k as f64).ln();
        cum += log_w.exp();
        if k as f64 > mean && 1.0 - cum < POISSON_TAIL {
            break;
        }
        if k > 10 * (mean as usize + 100) {
            break;
        }
    }
    let damp = (-shift * t).exp() * scale;
    out.iter_mut().for_each(|x| *x *= damp);
    Ok(out)
}

fn axpy(x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

/// Row `p(t, x, .)` of the absorbed walk on the box of radius `radius`.
pub fn transition_row(kernel: &JumpKernel, t: f64, x: &LatticePoint, radius: usize) -> Result<(TruncatedOperator, Vec<f64>)> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("t must be nonnegative, got {t}")));
    }
    let sources = SourceConfiguration::new(vec![x.clone()], 0.0)?;
    let op = TruncatedOperator::new(kernel, &sources, 0.0, radius)?;
    let mut v = vec![0.0; op.sites()];
    v[op.source_indices[0]] = 1.0;
    if t == 0.0 {
        return Ok((op, v));
    }
    let lambda = -kernel.diag_rate();
    if lambda * t > MAX_SERIES_LENGTH {
        return Err(Error::SeriesTooLong(lambda * t));
    }
    let row = expm_action(&op.matrix, lambda, t, &v)?;
    Ok((op, row))
}

/// `p(t, x, y)` of the walk absorbed outside the box.
pub fn transition_prob(kernel: &JumpKernel, t: f64, x: &LatticePoint, y: &LatticePoint, radius: usize) -> Result<f64> {
    let (op, row) = transition_row(kernel, t, x, radius)?;
    let j = op
        .geometry
        .index(y)
        .ok_or_else(|| invalid(format!("{y} lies outside the box of radius {radius}")))?;
    Ok(row[j])
}

/// `m_1(t, x)` on the box for a unit mass started at `y`.
#[derive(Debug, Clone, Serialize)]
pub struct M1Evolution {
    pub times: Vec<f64>,
    pub radius: usize,
    /// `values[k][site]`, sites in box index order.
    pub values: Vec<Vec<f64>>,
    pub total_mass: Vec<f64>,
}

impl M1Evolution {
    /// Least-squares slope of `ln total_mass` over `[t0, t1]`.
    pub fn log_slope(&self, t0: f64, t1: f64) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.total_mass)
            .filter(|(t, m)| **t >= t0 && **t <= t1 && **m > 0.0)
            .map(|(t, m)| (*t, m.ln()))
            .collect();
        if pts.len() < 2 {
            return Err(invalid("fewer than two grid times in the fit window"));
        }
        Ok(crate::symbol::slope(&pts))
    }
}

/// Solves `dm/dt = H_beta m`, `m(0) = delta_y`, on the box.
pub fn evolve_m1(
    kernel: &JumpKernel,
    sources: &SourceConfiguration,
    beta: f64,
    y: &LatticePoint,
    times: &[f64],
    radius: usize,
) -> Result<M1Evolution> {
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.first().map_or(true, |&t| t < 0.0) {
        return Err(invalid("time grid must be nonnegative and strictly increasing"));
    }
    let op = TruncatedOperator::new(kernel, sources, beta, radius)?;
    let start = op
        .geometry
        .index(y)
        .ok_or_else(|| invalid(format!("{y} lies outside the box of radius {radius}")))?;
    let mut v = vec![0.0; op.sites()];
    v[start] = 1.0;
    let shift = op.matrix.diag.iter().fold(0.0f64, |acc, d| acc.max(-d));
    let step_cap = 8.0 / op.matrix.shifted_row_sum(shift).max(1e-300);
    let mut now = 0.0;
    let mut values = Vec::with_capacity(times.len());
    let mut total_mass = Vec::with_capacity(times.len());
    for &t in times {
        let mut remaining = t - now;
        while remaining > 0.0 {
            let h = remaining.min(step_cap);
            v = expm_action(&op.matrix, shift, h, &v)?;
            remaining -= h;
        }
        now = t;
        total_mass.push(v.iter().sum());
        values.push(v.clone());
    }
    Ok(M1Evolution { times: times.to_vec(), radius, values, total_mass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::bessel_i_scaled;

    #[test]
    fn bessel_identity_in_one_dimension() {
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let o = LatticePoint::origin(1);
        let p = transition_prob(&k, 1.0, &o, &o, 50).unwrap();
        assert!((p - bessel_i_scaled(0, 1.0)).abs() < 1e-10);
        let p2 = transition_prob(&k, 3.0, &o, &LatticePoint::new(vec![2]), 50).unwrap();
        assert!((p2 - bessel_i_scaled(2, 3.0)).abs() < 1e-10);
    }

    #[test]
    fn zero_time_and_substochastic() {
        let k = JumpKernel::simple(2, 1.0).unwrap();
        let o = LatticePoint::origin(2);
        assert_eq!(transition_prob(&k, 0.0, &o, &o, 3).unwrap(), 1.0);
        assert_eq!(transition_prob(&k, 0.0, &o, &LatticePoint::new(vec![1, 0]), 3).unwrap(), 0.0);
        let (_, row) = transition_row(&k, 4.0, &o, 3).unwrap();
        let total: f64 = row.iter().sum();
        assert!(total < 1.0 && total > 0.5);
        assert!(row.iter().all(|&p| p >= -1e-15));
        let (_, wide) = transition_row(&k, 4.0, &o, 12).unwrap();
        assert!(wide.iter().sum::<f64>() > total);
        assert!(matches!(transition_prob(&k, 2e4, &o, &o, 3), Err(Error::SeriesTooLong(_))));
    }

    #[test]
    fn pure_walk_mass_is_substochastic() {
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let s = SourceConfiguration::new(vec![LatticePoint::origin(1)], 0.0).unwrap();
        let e = evolve_m1(&k, &s, 0.0, &LatticePoint::origin(1), &[0.0, 1.0, 5.0, 20.0], 10).unwrap();
        assert_eq!(e.total_mass[0], 1.0);
        assert!(e.total_mass.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert_eq!(e.values[0][10], 1.0);
    }
}
