//! Special functions needed by the symbol and the oracles: the Riemann zeta
//! function on the real line, the periodic-zeta (polylogarithm) expansion
//! used by the untruncated one-dimensional power-law kernel, and
//! exponentially scaled modified Bessel functions.

use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

const BERNOULLI_2K: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

/// Riemann zeta function for real `x != 1`.
///
/// Euler-Maclaurin summation for `x >= -1/2`, functional equation below.
pub fn zeta(x: f64) -> f64 {
    assert!(x != 1.0, "zeta has a pole at 1");
    if x < -0.5 {
        return zeta_reflected(x);
    }
    const N: usize = 16;
    let nf = N as f64;
    let mut sum = 0.0;
    for n in 1..N {
        sum += (n as f64).powf(-x);
    }
    sum += nf.powf(1.0 - x) / (x - 1.0) + 0.5 * nf.powf(-x);
    // rising factorial x (x+1) ... (x+2k-2) divided by (2k)!
    let mut rising = x;
    let mut fact = 2.0;
    let mut npow = nf.powf(-x - 1.0);
    for (k, b) in BERNOULLI_2K.iter().enumerate() {
        sum += b / fact * rising * npow;
        let j = 2.0 * (k as f64 + 1.0);
        rising *= (x + j - 1.0) * (x + j);
        fact *= (j + 1.0) * (j + 2.0);
        npow /= nf * nf;
    }
    sum
}

fn zeta_reflected(x: f64) -> f64 {
    // zeta(x) = 2^x pi^(x-1) sin(pi x / 2) Gamma(1-x) zeta(1-x)
    let sin = sin_half_pi(x);
    if sin == 0.0 {
        return 0.0;
    }
    let log_mag = x * 2f64.ln() + (x - 1.0) * PI.ln() + ln_gamma(1.0 - x);
    sin * log_mag.exp() * zeta(1.0 - x)
}

/// `sin(pi x / 2)`, exact zeros at even integers.
fn sin_half_pi(x: f64) -> f64 {
    let r = x.rem_euclid(4.0);
    if r == 0.0 || r == 2.0 {
        return 0.0;
    }
    // reduce to [-1, 1] where sin(pi r / 2) is evaluated directly
    let (r, sign) = if r > 2.0 { (r - 2.0, -1.0) } else { (r, 1.0) };
    let r = if r > 1.0 { 2.0 - r } else { r };
    sign * (PI * r / 2.0).sin()
}

/// Coefficients of the expansion
/// `sum_{n>=1} (cos(n t) - 1) / n^s = L |t|^(s-1) + sum_{m>=1} c_m t^(2m)`
/// valid for `|t| < 2 pi` and `1 < s < 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicZetaExpansion {
    pub s: f64,
    pub leading: f64,
    pub even: Vec<f64>,
}

impl PeriodicZetaExpansion {
    pub fn new(s: f64) -> Self {
        assert!(s > 1.0 && s < 3.0);
        let alpha = s - 1.0;
        // Gamma(-alpha) cos(pi alpha / 2) in a form without removable poles
        let leading =
            -PI / (2.0 * (PI * alpha / 2.0).sin() * statrs::function::gamma::gamma(1.0 + alpha));
        let mut even = Vec::with_capacity(64);
        for m in 1..=64usize {
            let x = s - 2.0 * m as f64;
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let c = if x >= -0.5 {
                zeta(x) / factorial(2 * m)
            } else {
                // zeta(x)/(2m)! via the functional equation, kept in logs
                let sin = sin_half_pi(x);
                let log_mag = x * 2f64.ln() + (x - 1.0) * PI.ln() + ln_gamma(1.0 - x)
                    - ln_gamma(2.0 * m as f64 + 1.0);
                sin * log_mag.exp() * zeta(1.0 - x)
            };
            even.push(sign * c);
        }
        Self { s, leading, even }
    }

    /// `sum_{n>=1} (cos(n t) - 1) / n^s`.
    pub fn eval(&self, t: f64) -> f64 {
        // reduce to [-pi, pi]
        let mut t = t.abs();
        if t > PI {
            t = t.rem_euclid(2.0 * PI);
            if t > PI {
                t = 2.0 * PI - t;
            }
        }
        if t == 0.0 {
            return 0.0;
        }
        let t2 = t * t;
        let mut p = t2;
        let mut sum = 0.0;
        for c in &self.even {
            let term = c * p;
            sum += term;
            if term.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
            p *= t2;
        }
        self.leading * t.powf(self.s - 1.0) + sum
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// `exp(-u) I_n(u)` for integer order `n >= 0` and `u >= 0`.
pub fn bessel_i_scaled(n: u32, u: f64) -> f64 {
    debug_assert!(u >= 0.0);
    if u == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let nf = n as f64;
    if u > 600.0 && u > 2.0 * nf * nf {
        return bessel_hankel(n, u);
    }
    bessel_quadrature(n, u)
}

fn bessel_hankel(n: u32, u: f64) -> f64 {
    let nf = n as f64;
    let mu = 4.0 * nf * nf;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        let kf = k as f64;
        term *= -(mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * u);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (2.0 * PI * u).sqrt()
}

fn bessel_quadrature(n: u32, u: f64) -> f64 {
    let nf = n as f64;
    // (1/pi) int_0^pi exp(u (cos s - 1)) cos(n s) ds, trapezoid on a
    // periodic analytic integrand
    let m = 32 + (6.0 * u.sqrt()) as usize + 2 * n as usize;
    let h = PI / m as f64;
    let mut sum = 0.0;
    for j in 0..=m {
        let s = j as f64 * h;
        let w = if j == 0 || j == m { 0.5 } else { 1.0 };
        sum += w * (u * (s.cos() - 1.0)).exp() * (nf * s).cos();
    }
    sum * h / PI
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_known_values() {
        assert!((zeta(2.0) - PI * PI / 6.0).abs() < 1e-14);
        assert!((zeta(4.0) - PI.powi(4) / 90.0).abs() < 1e-14);
        assert!((zeta(0.0) + 0.5).abs() < 1e-14);
        assert!((zeta(-1.0) + 1.0 / 12.0).abs() < 1e-14);
        assert!((zeta(1.5) - 2.612_375_348_685_488).abs() < 1e-13);
        assert!((zeta(0.5) + 1.460_354_508_809_586_8).abs() < 1e-13);
        assert_eq!(zeta(-2.0), 0.0);
        assert_eq!(zeta(-8.0), 0.0);
        assert!((zeta(-3.0) - 1.0 / 120.0).abs() < 1e-15);
        assert!((zeta(-0.4) + 0.247165460831715).abs() < 1e-13);
        assert!((zeta(-0.6) + 0.174595711938013).abs() < 1e-13);
    }

    #[test]
    fn periodic_zeta_matches_dilog_closed_form() {
        // sum cos(n t)/n^2 = pi^2/6 - pi t/2 + t^2/4 on [0, 2 pi]
        let e = PeriodicZetaExpansion::new(2.0);
        for &t in &[1e-3, 0.1, 1.0, 2.5, PI] {
            let exact = -PI * t / 2.0 + t * t / 4.0;
            assert!((e.eval(t) - exact).abs() < 1e-13, "t = {t}");
        }
    }

    #[test]
    fn periodic_zeta_matches_direct_sum() {
        for &s in &[1.5, 2.5, 1.2] {
            let e = PeriodicZetaExpansion::new(s);
            for &t in &[0.3, 1.0, 2.0, 3.0] {
                // direct partial sum plus zeta tail of the -1 part; the
                // oscillating tail is O(N^-s / t)
                let n_max = 2_000_000usize;
                let mut sum = 0.0;
                for n in 1..=n_max {
                    let nf = n as f64;
                    sum += (nf * t).cos() / nf.powf(s);
                }
                let direct = sum - zeta(s);
                let tol = 4.0 * (n_max as f64).powf(-s) / t + 1e-12;
                assert!((e.eval(t) - direct).abs() < tol, "s={s} t={t}");
            }
        }
    }

    #[test]
    fn scaled_bessel_values() {
        // e^-1 I_0(1) = 0.46575960759364043
        assert!((bessel_i_scaled(0, 1.0) - 0.465_759_607_593_640_4).abs() < 1e-14);
        // e^-2 I_1(2) = 0.21526928924893765
        assert!((bessel_i_scaled(1, 2.0) - 0.215_269_289_248_937_65).abs() < 1e-14);
        // branch continuity
        for n in [0, 2, 7] {
            let a = bessel_quadrature(n, 650.0);
            let b = bessel_hankel(n, 650.0);
            assert!((a - b).abs() < 1e-13 * a, "n = {n}");
        }
        for &u in &[700.0, 5e3, 1e6] {
            let lead = 1.0 / (2.0 * PI * u).sqrt();
            assert!((bessel_i_scaled(0, u) / lead - 1.0).abs() < 1.0 / u);
        }
    }
}
