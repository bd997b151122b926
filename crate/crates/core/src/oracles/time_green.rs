//! `G_lambda(x) = int_0^inf exp(-lambda t) p(t, 0, x) dt` in the time domain.
//!
//! For walks with nearest-neighbour steps along the axes the transition
//! probability on the infinite lattice factorizes into scaled Bessel
//! functions, one per axis, and the time integral is done by Gauss-Legendre
//! on geometric panels. Other kernels use the resolvent series of the walk
//! absorbed outside a box.

use super::lattice_box::TruncatedOperator;
use crate::error::{invalid, Error, Result};
use crate::gamma::SourceConfiguration;
use crate::green::GreenValue;
use crate::lattice::{JumpKernel, LatticePoint};
use crate::quadrature::gauss_legendre;
use crate::special::bessel_i_scaled;
use std::f64::consts::PI;

const MAX_RESOLVENT_TERMS: usize = 2_000_000;

/// Time-domain Green value; `radius` is the box used by kernels without a
/// Bessel factorization.
pub fn green_time_domain(kernel: &JumpKernel, lambda: f64, x: &LatticePoint, radius: usize) -> Result<GreenValue> {
    if x.dim() != kernel.dimension() {
        return Err(invalid("displacement has wrong dimension"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    let (value, err) = if kernel.is_axis_nearest_neighbour() {
        bessel_route(kernel, lambda, x)?
    } else {
        if lambda == 0.0 {
            return Err(invalid("the box resolvent needs lambda > 0"));
        }
        box_route(kernel, lambda, x, radius)?
    };
    Ok(GreenValue { value, divergent: false, estimated_abs_error: err, lambda, displacement: x.clone() })
}

fn bessel_route(kernel: &JumpKernel, lambda: f64, x: &LatticePoint) -> Result<(f64, f64)> {
    let d = kernel.dimension();
    let rates: Vec<f64> = (0..d).map(|j| kernel.rate(&LatticePoint::unit(d, j))).collect();
    if lambda == 0.0 && d < 3 {
        return Err(Error::DivergentGreen);
    }
    let xs: Vec<u32> = x.coords().iter().map(|c| c.unsigned_abs() as u32).collect();
    let p = |t: f64| -> f64 {
        let mut v = (-lambda * t).exp();
        for j in 0..d {
            if rates[j] > 0.0 {
                v *= bessel_i_scaled(xs[j], 2.0 * rates[j] * t);
            } else if xs[j] != 0 {
                return 0.0;
            }
        }
        v
    };
    let t_end = if lambda > 0.0 { (32.0 / lambda).min(1e14) } else { 1e14 };
    let integrate = |order: usize| -> f64 {
        let (gx, gw) = gauss_legendre(order);
        let panel = |a: f64, b: f64| -> f64 {
            let h = 0.5 * (b - a);
            gx.iter().zip(&gw).map(|(xi, wi)| wi * h * p(a + h * (xi + 1.0))).sum()
        };
        let mut sum = 0.0;
        // unit panels first, then doubling
        let mut a = 0.0;
        while a < 4.0 {
            sum += panel(a, a + 0.5);
            a += 0.5;
        }
        let mut a = 4.0;
        while a < t_end {
            let b = (2.0 * a).min(t_end);
            for k in 0..4 {
                let w = (b - a) / 4.0;
                sum += panel(a + k as f64 * w, a + (k + 1) as f64 * w);
            }
            a = b;
        }
        sum
    };
    let fine = integrate(24);
    let coarse = integrate(16);
    let mut tail = 0.0;
    if lambda == 0.0 {
        // local limit: p(t) ~ prod_j (4 pi r_j t)^(-1/2)
        let c: f64 = rates.iter().map(|r| (4.0 * PI * r).powf(-0.5)).product();
        let e = d as f64 / 2.0 - 1.0;
        tail = c * t_end.powf(-e) / e;
    }
    Ok((fine + tail, (fine - coarse).abs() + 1e-3 * tail))
}

fn box_route(kernel: &JumpKernel, lambda: f64, x: &LatticePoint, radius: usize) -> Result<(f64, f64)> {
    let d = kernel.dimension();
    let sources = SourceConfiguration::new(vec![LatticePoint::origin(d)], 0.0)?;
    let op = TruncatedOperator::new(kernel, &sources, 0.0, radius)?;
    let target = op
        .geometry
        .index(x)
        .ok_or_else(|| invalid(format!("{x} lies outside the box of radius {radius}")))?;
    let big = -kernel.diag_rate();
    let m = &op.matrix;
    // P = I + Q / Lambda on the box
    let mut v = vec![0.0; m.n];
    v[op.source_indices[0]] = 1.0;
    let mut w = vec![0.0; m.n];
    let q = big / (lambda + big);
    let mut coef = 1.0 / (lambda + big);
    let mut sum = 0.0;
    for k in 0..MAX_RESOLVENT_TERMS {
        sum += coef * v[target];
        let mass: f64 = v.iter().sum();
        // remaining terms are bounded by the mass times the geometric tail
        let bound = coef * q * mass / (1.0 - q);
        if bound < 1e-14 * sum.abs().max(1e-300) || (k > 0 && mass == 0.0) {
            return Ok((sum, bound));
        }
        m.apply(&v, &mut w);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi = vi + *wi / big;
        }
        std::mem::swap(&mut v, &mut w);
        coef *= q;
    }
    Err(Error::SeriesTooLong(MAX_RESOLVENT_TERMS as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_closed_form() {
        let k = JumpKernel::simple(1, 1.0).unwrap();
        for &(lam, x) in &[(1.0f64, 0i64), (0.01, 2), (1e-6, 0)] {
            let root = (lam * lam + 2.0 * lam).sqrt();
            let exact = (1.0 + lam - root).powi(x as i32) / root;
            let v = green_time_domain(&k, lam, &LatticePoint::new(vec![x]), 0).unwrap();
            assert!((v.value - exact).abs() < 1e-9 * exact, "{lam} {x}: {} vs {exact}", v.value);
        }
    }

    #[test]
    fn watson_constant_at_zero() {
        let k = JumpKernel::simple(3, 1.0).unwrap();
        let v = green_time_domain(&k, 0.0, &LatticePoint::origin(3), 0).unwrap();
        assert!((v.value - 1.516_386_059_151_978).abs() < 1e-8, "{}", v.value);
        assert!(green_time_domain(&JumpKernel::simple(2, 1.0).unwrap(), 0.0, &LatticePoint::origin(2), 0).is_err());
    }

    #[test]
    fn box_resolvent_against_bessel_route() {
        // the box route on a simple kernel, with a box large enough that
        // absorption is negligible at lambda = 1
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let (exact, _) = bessel_route(&k, 1.0, &LatticePoint::new(vec![1])).unwrap();
        let (boxed, _) = box_route(&k, 1.0, &LatticePoint::new(vec![1]), 40).unwrap();
        assert!((exact - boxed).abs() < 1e-12);
    }

    #[test]
    fn large_lambda() {
        let k = JumpKernel::heavy_tail_1d(0.5, 8).unwrap();
        let v = green_time_domain(&k, 1e6, &LatticePoint::origin(1), 4).unwrap();
        assert!((v.value * 1e6 - 1.0).abs() < 1e-5);
    }
}
