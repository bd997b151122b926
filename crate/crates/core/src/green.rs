//! Lattice Green's function
//! `G_lambda(x) = (2 pi)^-d int cos(theta . x) / (lambda - phi(theta)) dtheta`.
//!
//! The cube is split with a smooth radial cutoff `chi`: the part
//! `(1 - chi) f` is smooth and periodic and goes to the tensor trapezoid
//! rule, the part `chi f` lives in a ball around the origin and is
//! integrated in polar coordinates with geometrically graded radial panels,
//! which resolves the `|theta|^-alpha` singularity at `lambda = 0` and the
//! near-singular peak for small `lambda > 0`. Finite stencils with a wide
//! enough analyticity strip skip the split and use the plain trapezoid rule.
//! Resolution is doubled until the error estimate of the finest level, the
//! last difference scaled by the observed contraction, meets the tolerance.

use crate::error::{invalid, Error, Result};
use crate::lattice::{JumpKernel, LatticePoint, VarianceClass};
use crate::quadrature::{composite, gauss_legendre, power_graded};
use crate::symbol::Symbol;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Trapezoid points per axis at the first level.
    pub start_points: usize,
    /// Outer radius of the polar ball.
    pub ball_radius: f64,
    /// Cutoff is identically one inside this radius.
    pub inner_radius: f64,
}

impl Default for GreenOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-13, start_points: 32, ball_radius: 2.0, inner_radius: 0.6 }
    }
}

/// A Green's function value with its quadrature error estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenValue {
    /// `f64::INFINITY` when divergent.
    pub value: f64,
    pub divergent: bool,
    pub estimated_abs_error: f64,
    pub lambda: f64,
    pub displacement: LatticePoint,
}

/// Whether `G_0 = G_0(0, 0)` is finite, from the variance class and the
/// dimension alone: finite variance needs `d >= 3`; a tail of index `alpha`
/// needs `alpha < d`.
pub fn green_zero_is_finite(kernel: &JumpKernel) -> bool {
    let d = kernel.dimension() as f64;
    match kernel.variance_class() {
        VarianceClass::Finite => d >= 3.0,
        VarianceClass::Heavy(a) => a < d,
    }
}

fn finite_stencil_strip(kernel: &JumpKernel) -> Option<(f64, f64)> {
    if kernel.tail().is_some() || kernel.analytic_tail_mass() > 0.0 {
        return None;
    }
    let sigma: f64 = kernel.entries().iter().map(|(z, r)| r * z.norm_sq() as f64).sum();
    let r = kernel.stencil_radius().max(1) as f64;
    Some((sigma, r))
}

struct PolarNodes {
    /// `(r, weight including r^(d-1) chi(r) and (2 pi)^-d)`
    radial: Vec<(f64, f64)>,
    /// unit directions and their weights
    angular: Vec<(Vec<f64>, f64)>,
    /// `phi(r omega)`, radial index major
    phi: Vec<f64>,
}

/// Green's function evaluator for one kernel. Caches symbol values per
/// quadrature level; safe to share across threads.
pub struct GreenSolver {
    kernel: JumpKernel,
    symbol: Symbol,
    opts: GreenOptions,
    max_level: usize,
    reflection_symmetric: bool,
    /// second moment and stencil radius of a finite stencil
    strip: Option<(f64, f64)>,
    cap: usize,
    grid_cache: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
    folded_cache: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
    polar_cache: Mutex<HashMap<(usize, usize), Arc<PolarNodes>>>,
}

impl std::fmt::Debug for GreenSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GreenSolver").field("opts", &self.opts).finish()
    }
}

impl GreenSolver {
    pub fn new(kernel: &JumpKernel) -> Self {
        Self::with_options(kernel, GreenOptions::default())
    }

    pub fn with_options(kernel: &JumpKernel, opts: GreenOptions) -> Self {
        // trapezoid caps: 1024 per axis in d = 1, 2; 256 in d = 3; 64 beyond
        let cap = match kernel.dimension() {
            1 | 2 => 1024,
            3 => 256,
            _ => 64,
        };
        let mut max_level = 0;
        while opts.start_points << (max_level + 1) <= cap {
            max_level += 1;
        }
        Self {
            kernel: kernel.clone(),
            symbol: Symbol::new(kernel),
            opts,
            max_level,
            reflection_symmetric: kernel.is_reflection_symmetric(),
            strip: finite_stencil_strip(kernel),
            cap,
            grid_cache: Mutex::new(HashMap::new()),
            folded_cache: Mutex::new(HashMap::new()),
            polar_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn kernel(&self) -> &JumpKernel {
        &self.kernel
    }

    pub fn symbol(&self) -> &Symbol {
        &self.symbol
    }

    pub fn zero_is_finite(&self) -> bool {
        green_zero_is_finite(&self.kernel)
    }

    /// `G_lambda(x)` for `lambda > 0`.
    pub fn green(&self, lambda: f64, x: &LatticePoint) -> Result<GreenValue> {
        Ok(self.green_many(lambda, std::slice::from_ref(x))?.remove(0))
    }

    /// `G_0(x)`; divergent values are reported, not raised.
    pub fn green_zero(&self, x: &LatticePoint) -> Result<GreenValue> {
        Ok(self.green_zero_many(std::slice::from_ref(x))?.remove(0))
    }

    pub fn green_zero_many(&self, xs: &[LatticePoint]) -> Result<Vec<GreenValue>> {
        if !self.zero_is_finite() {
            return Ok(xs
                .iter()
                .map(|x| GreenValue {
                    value: f64::INFINITY,
                    divergent: true,
                    estimated_abs_error: 0.0,
                    lambda: 0.0,
                    displacement: x.clone(),
                })
                .collect());
        }
        self.integrate(0.0, xs)
    }

    /// `G_lambda(x)` for several displacements sharing one quadrature pass.
    pub fn green_many(&self, lambda: f64, xs: &[LatticePoint]) -> Result<Vec<GreenValue>> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        self.integrate(lambda, xs)
    }

    fn integrate(&self, lambda: f64, xs: &[LatticePoint]) -> Result<Vec<GreenValue>> {
        let d = self.kernel.dimension();
        for x in xs {
            if x.dim() != d {
                return Err(invalid(format!("displacement {x} has wrong dimension")));
            }
        }
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let xmax = xs.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let mut prev: Option<Vec<f64>> = None;
        let mut prev_diff: Option<Vec<f64>> = None;
        let mut last_err = vec![f64::INFINITY; xs.len()];
        for level in 0..=self.max_level {
            let cur = self.level_values(level, lambda, xs, xmax);
            if let Some(p) = &prev {
                let diffs: Vec<f64> = cur.iter().zip(p).map(|(a, b)| (a - b).abs()).collect();
                // error of the finer level from the observed contraction
                let errs: Vec<f64> = match &prev_diff {
                    Some(pd) => diffs
                        .iter()
                        .zip(pd)
                        .map(|(&e, &q)| if e <= 0.5 * q { e * (e / q) } else { e })
                        .collect(),
                    None => diffs.clone(),
                };
                let ok = errs
                    .iter()
                    .zip(&cur)
                    .all(|(e, v)| *e < self.opts.rtol * v.abs() + self.opts.atol);
                last_err = errs;
                prev_diff = Some(diffs);
                if ok {
                    return Ok(cur
                        .into_iter()
                        .zip(xs)
                        .zip(&last_err)
                        .map(|((v, x), e)| GreenValue {
                            value: v,
                            divergent: false,
                            estimated_abs_error: *e,
                            lambda,
                            displacement: x.clone(),
                        })
                        .collect());
                }
            }
            prev = Some(cur);
        }
        let best = prev.unwrap();
        let (i, e) = last_err
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, e)| (i, *e))
            .unwrap();
        Err(Error::QuadratureFailure { best: best[i], error: e })
    }

    fn cutoff(&self, r: f64) -> f64 {
        let (a, b) = (self.opts.inner_radius, self.opts.ball_radius);
        if r <= a {
            1.0
        } else if r >= b {
            0.0
        } else {
            let t = (b - r) / (b - a);
            let f = |u: f64| if u <= 0.0 { 0.0 } else { (-1.0 / u).exp() };
            f(t) / (f(t) + f(1.0 - t))
        }
    }

    /// For a finite stencil `1 / (lambda - phi)` is analytic in the strip
    /// `|Im theta| < acosh(1 + lambda r^2 / sigma) / r`, and the plain
    /// periodic trapezoid rule converges geometrically at that rate.
    fn plain_trapezoid(&self, lambda: f64) -> bool {
        match self.strip {
            Some((sigma, r)) => {
                let width = (1.0 + lambda * r * r / sigma).acosh() / r;
                width * self.cap as f64 >= 60.0
            }
            None => false,
        }
    }

    fn level_values(&self, level: usize, lambda: f64, xs: &[LatticePoint], xmax: f64) -> Vec<f64> {
        let n = self.opts.start_points << level;
        if self.plain_trapezoid(lambda) {
            return self.trapezoid(n, lambda, xs, false);
        }
        let trap = self.trapezoid(n, lambda, xs, true);
        let osc = (xmax.ceil() as usize).next_power_of_two();
        let polar = self.polar(level, osc, lambda, xs);
        trap.iter().zip(&polar).map(|(a, b)| a + b).collect()
    }

    fn phi_grid(&self, n: usize) -> Arc<Vec<f64>> {
        if let Some(g) = self.grid_cache.lock().unwrap().get(&n) {
            return g.clone();
        }
        let g = Arc::new(self.symbol.grid(n));
        // very large grids are recomputed rather than kept
        if g.len() <= 1 << 22 {
            self.grid_cache.lock().unwrap().insert(n, g.clone());
        }
        g
    }

    /// `phi` on the folded grid `theta_m = 2 pi m / n`, `m = 0..=n/2` per axis.
    fn folded_phi_grid(&self, n: usize) -> Arc<Vec<f64>> {
        if let Some(g) = self.folded_cache.lock().unwrap().get(&n) {
            return g.clone();
        }
        let d = self.kernel.dimension();
        let h = n / 2;
        let full = self.phi_grid(n);
        let side = h + 1;
        let total = side.pow(d as u32);
        let folded: Vec<f64> = (0..total)
            .map(|flat| {
                let mut rem = flat;
                let mut k = 0usize;
                let mut stride = 1usize;
                for _ in 0..d {
                    let m = rem % side;
                    rem /= side;
                    let kk = if m == h { 0 } else { h + m };
                    k += kk * stride;
                    stride *= n;
                }
                full[k]
            })
            .collect();
        let g = Arc::new(folded);
        if g.len() <= 1 << 22 {
            self.folded_cache.lock().unwrap().insert(n, g.clone());
        }
        g
    }

    /// The trapezoid sum of [`Self::trapezoid`] for reflection-symmetric
    /// kernels, folded onto `[0, pi]^d`.
    fn trapezoid_folded(&self, n: usize, lambda: f64, xs: &[LatticePoint], split: bool) -> Vec<f64> {
        let d = self.kernel.dimension();
        let h = n / 2;
        let side = h + 1;
        let phi = self.folded_phi_grid(n);
        let theta: Vec<f64> = (0..side).map(|m| 2.0 * PI * m as f64 / n as f64).collect();
        let wt: Vec<f64> = (0..side).map(|m| if m == 0 || m == h { 1.0 } else { 2.0 }).collect();
        let sq: Vec<f64> = theta.iter().map(|t| t * t).collect();
        let tables: Vec<Vec<Vec<f64>>> = xs
            .iter()
            .map(|x| x.coords().iter().map(|&c| theta.iter().map(|t| (t * c as f64).cos()).collect()).collect())
            .collect();
        let (inner2, outer2) = if split {
            (self.opts.inner_radius.powi(2), self.opts.ball_radius.powi(2))
        } else {
            (-1.0, -1.0)
        };
        let m = xs.len();
        let stride = side.pow(d as u32 - 1);
        let partials: Vec<Vec<f64>> = (0..side)
            .into_par_iter()
            .map(|last| {
                let mut acc = vec![0.0; m];
                let mut idx = vec![0usize; d];
                idx[d - 1] = last;
                for flat in 0..stride {
                    let mut rem = flat;
                    for j in 0..d - 1 {
                        idx[j] = rem % side;
                        rem /= side;
                    }
                    let r2: f64 = idx.iter().map(|&k| sq[k]).sum();
                    if r2 <= inner2 {
                        continue;
                    }
                    let wcut = if r2 >= outer2 { 1.0 } else { 1.0 - self.cutoff(r2.sqrt()) };
                    let wsym: f64 = idx.iter().map(|&k| wt[k]).product();
                    let w = wsym * wcut / (lambda - phi[flat + last * stride]);
                    for (a, tab) in acc.iter_mut().zip(&tables) {
                        let mut c = w;
                        for (j, t) in tab.iter().enumerate() {
                            c *= t[idx[j]];
                        }
                        *a += c;
                    }
                }
                acc
            })
            .collect();
        let scale = 1.0 / (n as f64).powi(d as i32);
        let mut out = vec![0.0; m];
        for p in partials {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out.iter().map(|v| v * scale).collect()
    }

    fn trapezoid(&self, n: usize, lambda: f64, xs: &[LatticePoint], split: bool) -> Vec<f64> {
        if self.reflection_symmetric && n % 2 == 0 {
            return self.trapezoid_folded(n, lambda, xs, split);
        }
        let d = self.kernel.dimension();
        let phi = self.phi_grid(n);
        let theta: Vec<f64> = (0..n).map(|k| -PI + 2.0 * PI * k as f64 / n as f64).collect();
        let sq: Vec<f64> = theta.iter().map(|t| t * t).collect();
        // e^{i theta_k x_j} per displacement and axis
        let tables: Vec<Vec<Vec<(f64, f64)>>> = xs
            .iter()
            .map(|x| {
                x.coords()
                    .iter()
                    .map(|&c| theta.iter().map(|t| ((t * c as f64).cos(), (t * c as f64).sin())).collect())
                    .collect()
            })
            .collect();
        let (inner2, outer2) = if split {
            (self.opts.inner_radius.powi(2), self.opts.ball_radius.powi(2))
        } else {
            (-1.0, -1.0)
        };
        let m = xs.len();
        let stride = n.pow(d as u32 - 1);
        // chunks along the last axis, reduced in fixed order
        let partials: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|last| {
                let mut acc = vec![0.0; m];
                let mut idx = vec![0usize; d];
                idx[d - 1] = last;
                for flat in 0..stride {
                    let mut rem = flat;
                    for j in 0..d - 1 {
                        idx[j] = rem % n;
                        rem /= n;
                    }
                    let r2: f64 = idx.iter().map(|&k| sq[k]).sum();
                    if r2 <= inner2 {
                        continue;
                    }
                    let wcut = if r2 >= outer2 { 1.0 } else { 1.0 - self.cutoff(r2.sqrt()) };
                    let w = wcut / (lambda - phi[flat + last * stride]);
                    for (a, tab) in acc.iter_mut().zip(&tables) {
                        let (mut re, mut im) = (1.0, 0.0);
                        for (j, t) in tab.iter().enumerate() {
                            let (c, s) = t[idx[j]];
                            let nr = re * c - im * s;
                            im = re * s + im * c;
                            re = nr;
                        }
                        *a += w * re;
                    }
                }
                acc
            })
            .collect();
        let scale = 1.0 / (n as f64).powi(d as i32);
        let mut out = vec![0.0; m];
        for p in partials {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out.iter().map(|v| v * scale).collect()
    }

    fn polar_nodes(&self, level: usize, osc: usize) -> Arc<PolarNodes> {
        if let Some(p) = self.polar_cache.lock().unwrap().get(&(level, osc)) {
            return p.clone();
        }
        let d = self.kernel.dimension();
        let (a, b) = (self.opts.inner_radius, self.opts.ball_radius);
        let q = 10 + 4 * level;
        let oscf = osc as f64;
        let mut radial = Vec::new();
        // geometric panels on [eps, a], innermost panel graded by r^(1/(d-alpha))
        let ratio = 0.2;
        let eps = a * 1e-12;
        let mut hi = a;
        while hi > eps {
            let lo = hi * ratio;
            let pieces = 1 + ((hi - lo) * oscf / 2.0) as usize;
            radial.extend(composite(lo, hi, pieces, q));
            hi = lo;
        }
        let sing = d as f64 - self.symbol.exponent();
        let p = if sing > 0.0 { 1.0 / sing } else { 1.0 };
        radial.extend(power_graded(hi, p, q));
        // the cutoff transition
        let pieces = 4 + level + ((b - a) * oscf / 2.0) as usize;
        radial.extend(composite(a, b, pieces, q));
        let norm = (2.0 * PI).powi(-(d as i32));
        let radial: Vec<(f64, f64)> = radial
            .into_iter()
            .map(|(r, w)| (r, w * r.powi(d as i32 - 1) * self.cutoff(r) * norm))
            .filter(|(_, w)| *w != 0.0)
            .collect();
        let angular = angular_rule(d, level, oscf * b);
        let mut phi = Vec::with_capacity(radial.len() * angular.len());
        let mut th = vec![0.0; d];
        for (r, _) in &radial {
            for (u, _) in &angular {
                for (t, ui) in th.iter_mut().zip(u) {
                    *t = r * ui;
                }
                phi.push(self.symbol.eval(&th));
            }
        }
        let nodes = Arc::new(PolarNodes { radial, angular, phi });
        self.polar_cache.lock().unwrap().insert((level, osc), nodes.clone());
        nodes
    }

    fn polar(&self, level: usize, osc: usize, lambda: f64, xs: &[LatticePoint]) -> Vec<f64> {
        let nodes = self.polar_nodes(level, osc);
        let na = nodes.angular.len();
        let xf: Vec<Vec<f64>> =
            xs.iter().map(|x| x.coords().iter().map(|&c| c as f64).collect()).collect();
        // omega . x per displacement and direction
        let dots: Vec<Vec<f64>> = xf
            .iter()
            .map(|x| {
                nodes.angular.iter().map(|(u, _)| u.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
            })
            .collect();
        let partials: Vec<Vec<f64>> = nodes
            .radial
            .par_iter()
            .enumerate()
            .map(|(ir, &(r, wr))| {
                let mut acc = vec![0.0; xs.len()];
                for (ia, (_, wa)) in nodes.angular.iter().enumerate() {
                    let f = wr * wa / (lambda - nodes.phi[ir * na + ia]);
                    for (a, dot) in acc.iter_mut().zip(&dots) {
                        let dx = dot[ia];
                        *a += if dx == 0.0 { f } else { f * (r * dx).cos() };
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; xs.len()];
        for p in partials {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out
    }
}

fn angular_rule(d: usize, level: usize, osc: f64) -> Vec<(Vec<f64>, f64)> {
    match d {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => {
            let m = (16 << level) + 2 * osc as usize;
            (0..m)
                .map(|k| {
                    let t = 2.0 * PI * (k as f64 + 0.5) / m as f64;
                    (vec![t.cos(), t.sin()], 2.0 * PI / m as f64)
                })
                .collect()
        }
        3 => {
            let nu = (8 << level) + osc as usize;
            let nphi = 2 * nu;
            let (x, w) = gauss_legendre(nu);
            let mut out = Vec::with_capacity(nu * nphi);
            for (u, wu) in x.iter().zip(&w) {
                let s = (1.0 - u * u).sqrt();
                for k in 0..nphi {
                    let t = 2.0 * PI * (k as f64 + 0.5) / nphi as f64;
                    out.push((vec![s * t.cos(), s * t.sin(), *u], wu * 2.0 * PI / nphi as f64));
                }
            }
            out
        }
        _ => {
            // product rule in hyperspherical coordinates is not provided;
            // fall back to a Fibonacci-free random-free axis-symmetric set
            let m = 8 << level;
            let (x, w) = gauss_legendre(m);
            let mut out = Vec::new();
            hyperspherical(d, &x, &w, &mut vec![], 1.0, &mut out);
            out
        }
    }
}

/// Product Gauss rule on `S^{d-1}` via nested polar angles (used for d >= 4).
fn hyperspherical(
    d: usize,
    x: &[f64],
    w: &[f64],
    prefix: &mut Vec<f64>,
    weight: f64,
    out: &mut Vec<(Vec<f64>, f64)>,
) {
    let remaining = d - prefix.len();
    let scale = (1.0 - prefix.iter().map(|p| p * p).sum::<f64>()).max(0.0).sqrt();
    if remaining == 2 {
        let m = 2 * x.len();
        for k in 0..m {
            let t = 2.0 * PI * (k as f64 + 0.5) / m as f64;
            let mut v = prefix.clone();
            v.push(scale * t.cos());
            v.push(scale * t.sin());
            out.push((v, weight * 2.0 * PI / m as f64));
        }
        return;
    }
    // cos of the next polar angle u with density (1-u^2)^((remaining-3)/2)
    let e = (remaining as f64 - 3.0) / 2.0;
    for (u, wu) in x.iter().zip(w) {
        prefix.push(scale * u);
        hyperspherical(d, x, w, prefix, weight * wu * (1.0 - u * u).powf(e), out);
        prefix.pop();
    }
}
