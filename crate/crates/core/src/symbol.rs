//! The Fourier symbol `phi(theta) = sum_z a(z) cos(theta . z)` of a jump
//! kernel and the quantities derived from it.

use crate::error::{invalid, Error, Result};
use crate::lattice::{JumpKernel, TailExtension};
use crate::special::PeriodicZetaExpansion;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

#[derive(Debug, Clone)]
enum Repr {
    /// support on the coordinate axes: `phi = sum_j f_j(theta_j)`
    Axis(Vec<Vec<(f64, f64)>>),
    /// kernel invariant under coordinate reflections: one term per orbit
    /// `|z|`, `phi = sum_k w_k (prod_j cos(theta_j k_j) - 1)`
    Reflective { max_abs: Vec<usize>, terms: Vec<(Vec<usize>, f64)> },
    /// one representative per `{z, -z}` pair, with weight `2 a(z)`
    General(Vec<(Vec<f64>, f64)>),
    /// untruncated 1-d power law
    Analytic { expansion: PeriodicZetaExpansion, scale: f64 },
}

/// Evaluator for `phi`; cheap to clone and safe to share between threads.
#[derive(Debug, Clone)]
pub struct Symbol {
    dim: usize,
    repr: Repr,
    half: Vec<(Vec<f64>, f64)>,
    exponent: f64,
    jump_rate: f64,
}

impl Symbol {
    pub fn new(kernel: &JumpKernel) -> Self {
        let d = kernel.dimension();
        let exponent = kernel.variance_class().exponent();
        let half: Vec<_> = kernel
            .entries()
            .iter()
            .filter(|(z, _)| z.canonical_sign() == *z)
            .map(|(z, r)| (z.coords().iter().map(|&c| c as f64).collect::<Vec<_>>(), 2.0 * r))
            .collect();
        let repr = if let Some(t) = kernel.tail() {
            if let TailExtension::Analytic { .. } = t.extension {
                let s = 1.0 + t.alpha;
                let scale = match t.angular {
                    crate::lattice::Angular::Constant(h) => h,
                    _ => unreachable!("analytic tails are radial"),
                };
                Repr::Analytic { expansion: PeriodicZetaExpansion::new(s), scale }
            } else if kernel.is_reflection_symmetric() {
                reflective(kernel)
            } else {
                Repr::General(half.clone())
            }
        } else if kernel.is_axis_nearest_neighbour() || is_axis_supported(&half) {
            let mut axes = vec![Vec::new(); d];
            for (z, w) in half.iter().cloned() {
                let j = z.iter().position(|&c| c != 0.0).unwrap();
                axes[j].push((z[j], w));
            }
            Repr::Axis(axes)
        } else if kernel.is_reflection_symmetric() {
            reflective(kernel)
        } else {
            Repr::General(half.clone())
        };
        Self { dim: d, repr, half, exponent, jump_rate: kernel.jump_rate() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Small-`theta` exponent of `|phi|` (2 for finite variance).
    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn jump_rate(&self) -> f64 {
        self.jump_rate
    }

    /// `phi(theta)`; written through `sin^2` so it keeps full relative
    /// accuracy near `theta = 0`.
    pub fn eval(&self, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.dim);
        match &self.repr {
            Repr::Axis(axes) => {
                let mut acc = 0.0;
                for (j, ax) in axes.iter().enumerate() {
                    for &(z, w) in ax {
                        let s = (0.5 * theta[j] * z).sin();
                        acc -= 2.0 * w * s * s;
                    }
                }
                acc
            }
            Repr::Reflective { max_abs, terms } => {
                // s[j][k] = 1 - cos(theta_j k) = 2 sin^2(theta_j k / 2)
                let tables: Vec<Vec<f64>> = max_abs
                    .iter()
                    .zip(theta)
                    .map(|(&m, &t)| {
                        (0..=m)
                            .map(|k| {
                                let s = (0.5 * t * k as f64).sin();
                                2.0 * s * s
                            })
                            .collect()
                    })
                    .collect();
                let mut acc = 0.0;
                for (k, w) in terms {
                    // q = prod_j (1 - s_j) - 1 accumulated without cancellation
                    let mut q = 0.0;
                    for (tab, &kj) in tables.iter().zip(k) {
                        let sj = tab[kj];
                        q = q * (1.0 - sj) - sj;
                    }
                    acc += w * q;
                }
                acc
            }
            Repr::General(half) => {
                let mut acc = 0.0;
                for (z, w) in half {
                    let dot: f64 = z.iter().zip(theta).map(|(a, b)| a * b).sum();
                    let s = (0.5 * dot).sin();
                    acc -= 2.0 * w * s * s;
                }
                acc
            }
            Repr::Analytic { expansion, scale } => scale * expansion.eval(theta[0]),
        }
    }

    /// Checked evaluation for external callers.
    pub fn phi(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim {
            return Err(invalid(format!(
                "theta has length {}, kernel dimension is {}",
                theta.len(),
                self.dim
            )));
        }
        Ok(self.eval(theta))
    }

    /// `phi` on the periodic grid `theta_k = -pi + 2 pi k / n` in each axis,
    /// flattened with axis 0 fastest.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let d = self.dim;
        let total = n.pow(d as u32);
        let theta1: Vec<f64> = (0..n).map(|k| -PI + 2.0 * PI * k as f64 / n as f64).collect();
        match &self.repr {
            Repr::Axis(axes) => {
                let tables: Vec<Vec<f64>> = axes
                    .iter()
                    .map(|ax| {
                        theta1
                            .iter()
                            .map(|&t| {
                                ax.iter()
                                    .map(|&(z, w)| {
                                        let s = (0.5 * t * z).sin();
                                        -2.0 * w * s * s
                                    })
                                    .sum()
                            })
                            .collect()
                    })
                    .collect();
                let mut out = vec![0.0; total];
                for (idx, o) in out.iter_mut().enumerate() {
                    let mut rem = idx;
                    let mut acc = 0.0;
                    for t in &tables {
                        acc += t[rem % n];
                        rem /= n;
                    }
                    *o = acc;
                }
                out
            }
            Repr::Analytic { .. } => theta1.iter().map(|&t| self.eval(&[t])).collect(),
            Repr::General(_) | Repr::Reflective { .. } => {
                let half = &self.half;
                if half.len() * total <= 1 << 24 {
                    let mut out = vec![0.0; total];
                    let mut th = vec![0.0; d];
                    for (idx, o) in out.iter_mut().enumerate() {
                        let mut rem = idx;
                        for t in th.iter_mut() {
                            *t = theta1[rem % n];
                            rem /= n;
                        }
                        *o = self.eval(&th);
                    }
                    out
                } else {
                    self.grid_fft(n, half)
                }
            }
        }
    }

    fn grid_fft(&self, n: usize, half: &[(Vec<f64>, f64)]) -> Vec<f64> {
        // phi(theta_k) = sum_z a(z) (-1)^{|z|_1} e^{2 pi i k.z / n} - sum_z a(z)
        let d = self.dim;
        let total = n.pow(d as u32);
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        let mut mass = 0.0;
        for (z, w) in half {
            for sign in [1.0, -1.0] {
                let mut idx = 0usize;
                let mut stride = 1usize;
                let mut parity = 0i64;
                for &c in z {
                    let c = (sign * c) as i64;
                    parity += c.abs();
                    idx += (c.rem_euclid(n as i64) as usize) * stride;
                    stride *= n;
                }
                let s = if parity % 2 == 0 { 1.0 } else { -1.0 };
                buf[idx] += Complex64::new(0.5 * w * s, 0.0);
            }
            mass += w;
        }
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_inverse(n);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut stride = 1usize;
        for _ in 0..d {
            let outer = total / n;
            for o in 0..outer {
                let base = (o / stride) * stride * n + o % stride;
                for k in 0..n {
                    line[k] = buf[base + k * stride];
                }
                fft.process(&mut line);
                for k in 0..n {
                    buf[base + k * stride] = line[k];
                }
            }
            stride *= n;
        }
        buf.iter().map(|c| c.re - mass).collect()
    }

    /// `s = max_theta (-phi(theta))`: dense grid search refined by cyclic
    /// coordinate golden-section ascent.
    pub fn max_s(&self) -> f64 {
        let d = self.dim;
        let g = match d {
            1 => 4097usize,
            2 => 257,
            3 => 49,
            _ => 17,
        };
        let step = 2.0 * PI / (g - 1) as f64;
        let total = g.pow(d as u32);
        let mut best: Vec<(f64, Vec<f64>)> = Vec::new();
        let mut th = vec![0.0; d];
        for idx in 0..total {
            let mut rem = idx;
            for t in th.iter_mut() {
                *t = -PI + step * (rem % g) as f64;
                rem /= g;
            }
            let v = -self.eval(&th);
            if best.len() < 4 || v > best[best.len() - 1].0 {
                best.push((v, th.clone()));
                best.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
                best.truncate(4);
            }
        }
        let mut s = best[0].0;
        for (_, start) in best {
            let (v, _) = self.ascend(start, step);
            s = s.max(v);
        }
        s
    }

    fn ascend(&self, mut x: Vec<f64>, width: f64) -> (f64, Vec<f64>) {
        let f = |x: &[f64]| -self.eval(x);
        let mut val = f(&x);
        for _ in 0..50 {
            let before = val;
            for j in 0..x.len() {
                let (lo, hi) = (x[j] - width, x[j] + width);
                let xj = golden_max(|t| {
                    let mut y = x.clone();
                    y[j] = t;
                    f(&y)
                }, lo, hi);
                let mut y = x.clone();
                y[j] = xj;
                let v = f(&y);
                if v > val {
                    val = v;
                    x = y;
                }
            }
            if val - before <= 1e-16 * val.abs() {
                break;
            }
        }
        (val, x)
    }

    /// Empirical constants `c1 <= |phi(theta)| / |theta|^exp <= c2` over a
    /// dense grid of the cube plus radial probes towards the origin.
    pub fn alpha_bounds(&self) -> Result<(f64, f64)> {
        let d = self.dim;
        let a = self.exponent;
        let g = match d {
            1 => 4097usize,
            2 => 201,
            3 => 41,
            _ => 13,
        };
        let step = 2.0 * PI / (g - 1) as f64;
        let total = g.pow(d as u32);
        let mut c1 = f64::INFINITY;
        let mut c2 = 0.0f64;
        let mut upd = |th: &[f64]| {
            let r = th.iter().map(|x| x * x).sum::<f64>().sqrt();
            if r == 0.0 {
                return;
            }
            let q = self.eval(th).abs() / r.powf(a);
            c1 = c1.min(q);
            c2 = c2.max(q);
        };
        let mut th = vec![0.0; d];
        for idx in 0..total {
            let mut rem = idx;
            for t in th.iter_mut() {
                *t = -PI + step * (rem % g) as f64;
                rem /= g;
            }
            upd(&th);
        }
        for dir in probe_directions(d) {
            for k in 1..=12 {
                let r = 10f64.powf(-(k as f64) / 2.0);
                let p: Vec<f64> = dir.iter().map(|u| u * r).collect();
                upd(&p);
            }
        }
        if !(c1 > 0.0) {
            return Err(Error::SymbolDegeneracy(c1));
        }
        Ok((c1, c2))
    }

    /// Least-squares slope of `log|phi|` against `log|theta|` along the
    /// first axis, on `n` log-spaced radii in `[r_min, r_max]`.
    pub fn fitted_exponent(&self, r_min: f64, r_max: f64, n: usize) -> f64 {
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                let r = (r_min.ln() + t * (r_max / r_min).ln()).exp();
                let mut th = vec![0.0; self.dim];
                th[0] = r;
                (r.ln(), self.eval(&th).abs().ln())
            })
            .collect();
        slope(&pts)
    }
}

fn reflective(kernel: &JumpKernel) -> Repr {
    let d = kernel.dimension();
    let mut orbits: std::collections::BTreeMap<Vec<usize>, f64> = std::collections::BTreeMap::new();
    for (z, r) in kernel.entries() {
        let key: Vec<usize> = z.coords().iter().map(|c| c.unsigned_abs() as usize).collect();
        *orbits.entry(key).or_insert(0.0) += r;
    }
    let mut max_abs = vec![0usize; d];
    for k in orbits.keys() {
        for (m, &c) in max_abs.iter_mut().zip(k) {
            *m = (*m).max(c);
        }
    }
    Repr::Reflective { max_abs, terms: orbits.into_iter().collect() }
}

fn is_axis_supported(half: &[(Vec<f64>, f64)]) -> bool {
    half.iter().all(|(z, _)| z.iter().filter(|&&c| c != 0.0).count() == 1)
}

pub(crate) fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn probe_directions(d: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        dirs.push(e);
    }
    let diag = 1.0 / (d as f64).sqrt();
    dirs.push(vec![diag; d]);
    if d >= 2 {
        let mut v = vec![0.0; d];
        v[0] = std::f64::consts::FRAC_1_SQRT_2;
        v[1] = std::f64::consts::FRAC_1_SQRT_2;
        dirs.push(v);
    }
    dirs
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
