//! Monte Carlo branching random walk.
//!
//! Particles are independent once born, so each trial keeps a queue of
//! unprocessed particles ordered by birth time and runs every particle's
//! whole life before moving on. Off the sources a particle waits `Exp(Lambda)`
//! and jumps with probabilities `a(z) / Lambda`; at a source the jump clock
//! competes with one branching clock per offspring number. A particle
//! producing `n >= 1` offspring is continued as one of them.
//!
//! When the kernel has a finite stencil, the walk between source visits is
//! not stepped through: the number of jumps `K` until the next source hit and
//! the source hit are drawn from first-passage tables of the embedded jump
//! chain, and the elapsed time is a `Gamma(K - 1, Lambda)` variable. Paths
//! that do not come back within `K_max` jumps, where `K_max - 1` exponential
//! holding times exceed `t_max` with probability below `1e-13`, are treated
//! as never returning.

use super::lattice_box::TruncatedOperator;
use crate::error::{invalid, Error, Result};
use crate::gamma::SourceConfiguration;
use crate::lattice::{JumpKernel, LatticePoint, TailExtension};
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Gamma, WeightedAliasIndex};
use rayon::prelude::*;
use serde::Serialize;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

/// Largest dimension handled by the simulator.
pub const MAX_SIM_DIM: usize = 4;
type Pos = [i64; MAX_SIM_DIM];

/// Offspring intensities `b_n`, `n != 1`, with `b_1 = -sum b_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchingLaw {
    rates: BTreeMap<u32, f64>,
}

impl BranchingLaw {
    pub fn new(rates: BTreeMap<u32, f64>) -> Result<Self> {
        if rates.contains_key(&1) {
            return Err(invalid("b_1 is determined by the other intensities"));
        }
        if rates.values().any(|&b| !(b >= 0.0 && b.is_finite())) {
            return Err(invalid("offspring intensities must be finite and nonnegative"));
        }
        Ok(Self { rates: rates.into_iter().filter(|(_, b)| *b > 0.0).collect() })
    }

    /// `b_2 = beta`, `b_1 = -beta`.
    pub fn binary(beta: f64) -> Result<Self> {
        Self::new(BTreeMap::from([(2, beta)]))
    }

    /// `b_0 = b_2 = r`, `b_1 = -2r`.
    pub fn critical_binary(r: f64) -> Result<Self> {
        Self::new(BTreeMap::from([(0, r), (2, r)]))
    }

    pub fn rates(&self) -> &BTreeMap<u32, f64> {
        &self.rates
    }

    pub fn b1(&self) -> f64 {
        -self.total_rate()
    }

    pub fn total_rate(&self) -> f64 {
        self.rates.values().sum()
    }

    /// `f'(1)` for `f(u) = sum_n b_n u^n`.
    pub fn beta(&self) -> f64 {
        self.rates.iter().map(|(n, b)| (*n as f64 - 1.0) * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SimMethod {
    /// First-passage tables when the kernel allows them.
    Auto,
    /// Every jump simulated.
    Stepwise,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub t_max: f64,
    /// Spacing of the output time grid.
    pub dt: f64,
    pub trials: usize,
    pub seed: u64,
    pub pop_cap: u64,
    /// Initial particle position; the first source when absent.
    pub start: Option<LatticePoint>,
    pub method: SimMethod,
    /// Record per-site mean populations on `{-r..r}^d`.
    pub site_radius: Option<usize>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            t_max: 30.0,
            dt: 0.5,
            trials: 1000,
            seed: 0,
            pop_cap: 1_000_000,
            start: None,
            method: SimMethod::Auto,
            site_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteMeans {
    pub radius: usize,
    /// `mean[k][site]` in box index order.
    pub mean: Vec<Vec<f64>>,
    pub std_error: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationOutcome {
    pub times: Vec<f64>,
    /// `populations[trial][k]`; `None` after the trial hit the population cap.
    pub populations: Vec<Vec<Option<u64>>>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub trials_alive: Vec<usize>,
    pub trials_valid: Vec<usize>,
    pub truncated_trials: usize,
    /// More than half the trials hit the population cap.
    pub unreliable: bool,
    pub seed: u64,
    pub law: Option<BranchingLaw>,
    pub kernel_hash: Option<u64>,
    pub method: String,
    pub site_means: Option<SiteMeans>,
}

impl SimulationOutcome {
    /// Outcome from given per-trial populations (all trials complete).
    pub fn from_populations(times: Vec<f64>, populations: Vec<Vec<u64>>, seed: u64) -> Result<Self> {
        if populations.iter().any(|p| p.len() != times.len()) {
            return Err(invalid("population rows must match the time grid"));
        }
        let pops = populations.into_iter().map(|r| r.into_iter().map(Some).collect()).collect();
        Ok(Self::assemble(times, pops, 0, seed, None, None, "given".into(), None))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        times: Vec<f64>,
        populations: Vec<Vec<Option<u64>>>,
        truncated_trials: usize,
        seed: u64,
        law: Option<BranchingLaw>,
        kernel_hash: Option<u64>,
        method: String,
        site_means: Option<SiteMeans>,
    ) -> Self {
        let nt = times.len();
        let mut mean = vec![0.0; nt];
        let mut variance = vec![0.0; nt];
        let mut trials_alive = vec![0; nt];
        let mut trials_valid = vec![0; nt];
        for k in 0..nt {
            let (mut n, mut s, mut s2) = (0usize, 0.0f64, 0.0f64);
            for row in &populations {
                if let Some(p) = row[k] {
                    n += 1;
                    s += p as f64;
                    if p > 0 {
                        trials_alive[k] += 1;
                    }
                }
            }
            let m = if n > 0 { s / n as f64 } else { f64::NAN };
            for row in &populations {
                if let Some(p) = row[k] {
                    let e = p as f64 - m;
                    s2 += e * e;
                }
            }
            mean[k] = m;
            variance[k] = if n > 1 { s2 / (n - 1) as f64 } else { 0.0 };
            trials_valid[k] = n;
        }
        let unreliable = 2 * truncated_trials > populations.len();
        Self {
            times,
            populations,
            mean,
            variance,
            trials_alive,
            trials_valid,
            truncated_trials,
            unreliable,
            seed,
            law,
            kernel_hash,
            method,
            site_means,
        }
    }

    pub fn trials(&self) -> usize {
        self.populations.len()
    }

    /// CSV with header `t,mean,variance,trials_alive`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean,variance,trials_alive\n");
        for k in 0..self.times.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                crate::lattice::fmt17(self.times[k]),
                crate::lattice::fmt17(self.mean[k]),
                crate::lattice::fmt17(self.variance[k]),
                self.trials_alive[k]
            ));
        }
        out
    }

    /// Run metadata: seed, law, kernel hash and truncation counts.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "trials": self.trials(),
            "law": self.law.as_ref().map(|l| l.rates.iter().map(|(n, b)| (n.to_string(), *b)).collect::<BTreeMap<_, _>>()),
            "beta": self.law.as_ref().map(|l| l.beta()),
            "kernel_hash": self.kernel_hash.map(|h| format!("{h:016x}")),
            "method": self.method,
            "truncated_trials": self.truncated_trials,
            "unreliable": self.unreliable,
            "t_max": self.times.last(),
        })
    }
}

struct TailSampler {
    s: f64,
    m: i64,
    cap: f64,
}

impl TailSampler {
    /// Integer `n >= m` with probability proportional to `n^-s`, by
    /// rejection from the continuous Pareto law on `[m, inf)`.
    fn sample<R: Rng>(&self, rng: &mut R) -> i64 {
        loop {
            let u: f64 = 1.0 - rng.gen::<f64>();
            let x = self.m as f64 * u.powf(-1.0 / (self.s - 1.0));
            if !(x < 1e15) {
                continue;
            }
            let n = x.floor();
            let q = n.powf(1.0 - self.s) * -((1.0 - self.s) * (1.0 / n).ln_1p()).exp_m1() / (self.s - 1.0);
            let ratio = n.powf(-self.s) / q;
            if rng.gen::<f64>() * self.cap <= ratio {
                return n as i64;
            }
        }
    }
}

struct JumpSampler {
    offsets: Vec<Pos>,
    alias: WeightedAliasIndex<f64>,
    /// probability that a jump comes from the analytic tail
    tail_prob: f64,
    tail: Option<TailSampler>,
}

impl JumpSampler {
    fn new(kernel: &JumpKernel) -> Result<Self> {
        let total = -kernel.diag_rate();
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        for (z, r) in kernel.entries() {
            offsets.push(to_pos(z));
            weights.push(*r);
        }
        let alias = WeightedAliasIndex::new(weights).map_err(|e| invalid(format!("jump law: {e}")))?;
        let tail_mass = kernel.analytic_tail_mass();
        let tail = match kernel.tail() {
            Some(t) if matches!(t.extension, TailExtension::Analytic { .. }) => {
                let s = 1.0 + t.alpha;
                let m = t.truncation_radius as i64 + 1;
                Some(TailSampler { s, m, cap: (1.0 + 1.0 / m as f64).powf(s) })
            }
            _ => None,
        };
        Ok(Self { offsets, alias, tail_prob: tail_mass / total, tail })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Pos {
        if let Some(t) = &self.tail {
            if rng.gen::<f64>() < self.tail_prob {
                let n = t.sample(rng);
                let mut p = [0; MAX_SIM_DIM];
                p[0] = if rng.gen::<bool>() { n } else { -n };
                return p;
            }
        }
        self.offsets[self.alias.sample(rng)]
    }
}

fn to_pos(x: &LatticePoint) -> Pos {
    let mut p = [0; MAX_SIM_DIM];
    p[..x.dim()].copy_from_slice(x.coords());
    p
}

/// First-passage law of the embedded jump chain: from a start state, the
/// number of jumps `K` until the first source hit and the source hit.
struct ExcursionTable {
    cum: Vec<f64>,
    outcomes: Vec<(u32, u32)>,
}

impl ExcursionTable {
    fn sample<R: Rng>(&self, rng: &mut R) -> Option<(u32, u32)> {
        let u: f64 = rng.gen();
        let i = self.cum.partition_point(|&c| c <= u);
        self.outcomes.get(i).copied()
    }
}

struct Excursions {
    /// one table per source, then one for an off-source start if any
    tables: Vec<ExcursionTable>,
    /// `gammas[k]` is `Gamma(k, 1 / Lambda)` for `k >= 1`
    gammas: Vec<Option<Gamma<f64>>>,
}

fn k_max_for(t_max: f64, rate: f64) -> usize {
    let x = t_max * rate;
    let mut k = 2usize;
    // P(Gamma(k - 1, 1) <= x) < 1e-13
    while statrs::function::gamma::gamma_lr((k - 1) as f64, x) >= 1e-13 {
        k += 1;
    }
    k
}

impl Excursions {
    fn build(kernel: &JumpKernel, sources: &[Pos], start: Option<Pos>, t_max: f64) -> Option<Self> {
        if kernel.analytic_tail_mass() > 0.0 {
            return None;
        }
        let d = kernel.dimension();
        let rate = -kernel.diag_rate();
        let k_max = k_max_for(t_max, rate);
        let reach = ((k_max + 1) / 2) as i64 * kernel.stencil_radius().max(1);
        let mut far = 0i64;
        for s in sources.iter().chain(start.iter()) {
            far = far.max(s[..d].iter().map(|c| c.abs()).max().unwrap_or(0));
        }
        let radius = (far + reach) as usize;
        let side = (2 * radius + 1) as f64;
        let sites = side.powi(d as i32);
        let per_row = kernel.entries().len() as f64;
        let starts = (sources.len() + start.is_some() as usize) as f64;
        if sites > 4e6 || sites * per_row * k_max as f64 * starts > 6e9 {
            return None;
        }
        let pts: Vec<LatticePoint> = sources.iter().map(|p| LatticePoint::new(p[..d].to_vec())).collect();
        let cfg = SourceConfiguration::new(pts, 0.0).ok()?;
        let op = TruncatedOperator::new(kernel, &cfg, 0.0, radius).ok()?;
        let src: Vec<usize> = op.source_indices.clone();
        let mut start_sites: Vec<usize> = src.clone();
        if let Some(p) = start {
            start_sites.push(op.geometry.index(&LatticePoint::new(p[..d].to_vec()))?);
        }
        let m = &op.matrix;
        let mut tables = Vec::new();
        let mut v = vec![0.0; m.n];
        let mut w = vec![0.0; m.n];
        for &s0 in &start_sites {
            v.iter_mut().for_each(|x| *x = 0.0);
            v[s0] = 1.0;
            let mut cum = Vec::new();
            let mut outcomes = Vec::new();
            let mut acc = 0.0;
            for k in 1..=k_max {
                // one jump of the embedded chain: w = (A - diag) v / Lambda
                m.apply(&v, &mut w);
                for (i, wi) in w.iter_mut().enumerate() {
                    *wi = (*wi - m.diag[i] * v[i]) / rate;
                }
                std::mem::swap(&mut v, &mut w);
                for (j, &si) in src.iter().enumerate() {
                    if v[si] > 0.0 {
                        acc += v[si];
                        cum.push(acc);
                        outcomes.push((k as u32, j as u32));
                        v[si] = 0.0;
                    }
                }
            }
            tables.push(ExcursionTable { cum, outcomes });
        }
        let gammas = (0..=k_max)
            .map(|k| if k == 0 { None } else { Gamma::new(k as f64, 1.0 / rate).ok() })
            .collect();
        Some(Self { tables, gammas })
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Pending {
    birth: f64,
    site: u32,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on birth time
        other.birth.total_cmp(&self.birth).then(other.site.cmp(&self.site))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Simulator<'a> {
    dim: usize,
    sources: Vec<Pos>,
    start: Pos,
    rate: f64,
    law: Vec<(u32, f64)>,
    law_total: f64,
    jumps: JumpSampler,
    excursions: Option<Excursions>,
    cfg: &'a SimulationConfig,
    steps: usize,
    site_box: Option<(usize, usize)>,
}

struct TrialResult {
    populations: Vec<Option<u64>>,
    truncated: bool,
    sites: Option<Vec<u32>>,
}

impl<'a> Simulator<'a> {
    fn source_of(&self, p: &Pos) -> Option<usize> {
        self.sources.iter().position(|s| s == p)
    }

    fn site_index(&self, p: &Pos) -> Option<usize> {
        let (r, side) = self.site_box?;
        let r = r as i64;
        let mut idx = 0usize;
        for &c in p[..self.dim].iter().rev() {
            if c.abs() > r {
                return None;
            }
            idx = idx * side + (c + r) as usize;
        }
        Some(idx)
    }

    fn grid_index_at_or_after(&self, t: f64) -> usize {
        let k = (t / self.cfg.dt).ceil();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.steps + 1)
        }
    }

    /// Branching event at a source: returns the offspring count.
    fn offspring<R: Rng>(&self, rng: &mut R) -> u32 {
        let mut u = rng.gen::<f64>() * self.law_total;
        for &(n, b) in &self.law {
            if u < b {
                return n;
            }
            u -= b;
        }
        self.law.last().unwrap().0
    }

    /// Runs one particle from `(site, t0)` to death or `t_max`, pushing
    /// children through `birth`. Returns the death time (infinite if alive
    /// at `t_max`).
    fn live<R: Rng>(
        &self,
        rng: &mut R,
        t0: f64,
        mut pos: Pos,
        birth: &mut dyn FnMut(f64, u32),
        sites: &mut Option<Vec<u32>>,
    ) -> f64 {
        let t_max = self.cfg.t_max;
        let mut t = t0;
        let mut at_source = self.source_of(&pos);
        let mut first = true;
        loop {
            let rate = if at_source.is_some() { self.rate + self.law_total } else { self.rate };
            let hold: f64 = rng.sample::<f64, _>(Exp1) / rate;
            let next = t + hold;
            if sites.is_some() {
                self.record(sites, &pos, t, next.min(t_max));
            }
            if next > t_max {
                return f64::INFINITY;
            }
            t = next;
            if let Some(j) = at_source {
                if rng.gen::<f64>() * rate >= self.rate {
                    let n = self.offspring(rng);
                    if n == 0 {
                        return t;
                    }
                    for _ in 1..n {
                        birth(t, j as u32);
                    }
                    continue;
                }
            }
            // a jump
            if let (Some(ex), true) = (&self.excursions, sites.is_none()) {
                let table = match at_source {
                    Some(j) => &ex.tables[j],
                    None if first => &ex.tables[self.sources.len()],
                    None => unreachable!("excursions start at sources"),
                };
                match table.sample(rng) {
                    None => return f64::INFINITY,
                    Some((k, j)) => {
                        if k > 1 {
                            t += ex.gammas[k as usize - 1].as_ref().unwrap().sample(rng);
                        }
                        if t > t_max {
                            return f64::INFINITY;
                        }
                        pos = self.sources[j as usize];
                        at_source = Some(j as usize);
                    }
                }
            } else {
                let z = self.jumps.sample(rng);
                for i in 0..self.dim {
                    pos[i] += z[i];
                }
                at_source = self.source_of(&pos);
            }
            first = false;
        }
    }

    fn record(&self, sites: &mut Option<Vec<u32>>, pos: &Pos, from: f64, to: f64) {
        let (Some(buf), Some(idx)) = (sites.as_mut(), self.site_index(pos)) else {
            return;
        };
        let (_, side) = self.site_box.unwrap();
        let per_time = side.pow(self.dim as u32);
        let k0 = self.grid_index_at_or_after(from);
        let mut k = k0;
        while k <= self.steps && (k as f64) * self.cfg.dt < to {
            buf[k * per_time + idx] += 1;
            k += 1;
        }
        // the final grid time is inclusive of a particle still present at t_max
        if to >= self.cfg.t_max && k == self.steps && (k as f64) * self.cfg.dt <= to {
            buf[k * per_time + idx] += 1;
        }
    }

    fn trial(&self, trial: usize) -> TrialResult {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(trial as u64);
        let steps = self.steps;
        let mut diff = vec![0i64; steps + 2];
        let mut heap = BinaryHeap::new();
        let start_code = match self.source_of(&self.start) {
            Some(j) => j as u32,
            None => self.sources.len() as u32,
        };
        heap.push(Pending { birth: 0.0, site: start_code });
        let mut created: u64 = 1;
        let mut valid_until = steps + 1;
        let mut truncated = false;
        let mut sites = self.site_box.map(|(_, side)| vec![0u32; (steps + 1) * side.pow(self.dim as u32)]);
        let mut children: Vec<(f64, u32)> = Vec::new();
        while let Some(p) = heap.pop() {
            let pos = if (p.site as usize) < self.sources.len() { self.sources[p.site as usize] } else { self.start };
            children.clear();
            let death = self.live(&mut rng, p.birth, pos, &mut |t, j| children.push((t, j)), &mut sites);
            let k0 = self.grid_index_at_or_after(p.birth);
            let k1 = if death.is_finite() { self.grid_index_at_or_after(death) } else { steps + 1 };
            diff[k0] += 1;
            diff[k1.max(k0)] -= 1;
            if created + children.len() as u64 > self.cfg.pop_cap {
                truncated = true;
                // grid times strictly before this particle's birth stay exact
                valid_until = self.grid_index_at_or_after(p.birth);
                break;
            }
            created += children.len() as u64;
            for &(t, j) in &children {
                heap.push(Pending { birth: t, site: j });
            }
        }
        let mut populations = Vec::with_capacity(steps + 1);
        let mut acc = 0i64;
        for (k, dk) in diff.iter().take(steps + 1).enumerate() {
            acc += dk;
            populations.push(if k < valid_until { Some(acc as u64) } else { None });
        }
        TrialResult { populations, truncated, sites: if truncated { None } else { sites } }
    }
}

/// Simulates `trials` independent branching random walks.
pub fn simulate_brw(
    kernel: &JumpKernel,
    sources: &SourceConfiguration,
    law: &BranchingLaw,
    cfg: &SimulationConfig,
) -> Result<SimulationOutcome> {
    let d = kernel.dimension();
    if d > MAX_SIM_DIM {
        return Err(invalid(format!("simulation supports d <= {MAX_SIM_DIM}")));
    }
    if sources.dim() != d {
        return Err(invalid("source dimension does not match the kernel"));
    }
    if cfg.trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    if !(cfg.t_max > 0.0 && cfg.t_max.is_finite() && cfg.dt > 0.0 && cfg.dt <= cfg.t_max) {
        return Err(invalid("need 0 < dt <= t_max"));
    }
    let steps = (cfg.t_max / cfg.dt).round() as usize;
    if ((steps as f64) * cfg.dt - cfg.t_max).abs() > 1e-9 * cfg.t_max {
        return Err(invalid("t_max must be a multiple of dt"));
    }
    let start = cfg.start.clone().unwrap_or_else(|| sources.points()[0].clone());
    if start.dim() != d {
        return Err(invalid("start point has wrong dimension"));
    }
    let src: Vec<Pos> = sources.points().iter().map(to_pos).collect();
    let start_pos = to_pos(&start);
    let off_source_start = if src.contains(&start_pos) { None } else { Some(start_pos) };
    let excursions = match (cfg.method, cfg.site_radius) {
        (SimMethod::Auto, None) => Excursions::build(kernel, &src, off_source_start, cfg.t_max),
        _ => None,
    };
    let method = if excursions.is_some() { "first-passage" } else { "stepwise" };
    let mut cfg_local = cfg.clone();
    cfg_local.t_max = steps as f64 * cfg.dt;
    let sim = Simulator {
        dim: d,
        sources: src,
        start: start_pos,
        rate: -kernel.diag_rate(),
        law: law.rates.iter().map(|(n, b)| (*n, *b)).collect(),
        law_total: law.total_rate(),
        jumps: JumpSampler::new(kernel)?,
        excursions,
        cfg: &cfg_local,
        steps,
        site_box: cfg.site_radius.map(|r| (r, 2 * r + 1)),
    };
    let results: Vec<TrialResult> = (0..cfg.trials).into_par_iter().map(|i| sim.trial(i)).collect();
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * cfg.dt).collect();
    let truncated = results.iter().filter(|r| r.truncated).count();
    let site_means = cfg.site_radius.map(|r| {
        let per_time = (2 * r + 1).pow(d as u32);
        let complete: Vec<&Vec<u32>> = results.iter().filter_map(|t| t.sites.as_ref()).collect();
        let n = complete.len().max(1) as f64;
        let mut mean = vec![vec![0.0; per_time]; steps + 1];
        let mut se = vec![vec![0.0; per_time]; steps + 1];
        for k in 0..=steps {
            for s in 0..per_time {
                let (mut a, mut a2) = (0.0, 0.0);
                for c in &complete {
                    let v = c[k * per_time + s] as f64;
                    a += v;
                    a2 += v * v;
                }
                let m = a / n;
                let var = if n > 1.0 { (a2 - n * m * m).max(0.0) / (n - 1.0) } else { 0.0 };
                mean[k][s] = m;
                se[k][s] = (var / n).sqrt();
            }
        }
        SiteMeans { radius: r, mean, std_error: se }
    });
    let populations = results.into_iter().map(|r| r.populations).collect();
    Ok(SimulationOutcome::assemble(
        times,
        populations,
        truncated,
        cfg.seed,
        Some(law.clone()),
        Some(kernel.content_hash()),
        method.into(),
        site_means,
    ))
}

/// Growth rate of the mean population with a bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthEstimate {
    pub rate: f64,
    pub std_error: f64,
}

const BOOTSTRAP_REPLICATES: usize = 200;

/// Least-squares slope of `ln mean(mu_t)` over the grid times in
/// `[t0, t1]`, with a bootstrap over trials for the standard error.
pub fn estimate_lambda0(outcome: &SimulationOutcome, window: (f64, f64)) -> Result<GrowthEstimate> {
    let (t0, t1) = window;
    let idx: Vec<usize> = (0..outcome.times.len())
        .filter(|&k| outcome.times[k] >= t0 - 1e-12 && outcome.times[k] <= t1 + 1e-12)
        .collect();
    if idx.len() < 2 {
        return Err(invalid("fit window contains fewer than two grid times"));
    }
    let fit = |means: &[f64]| -> Option<f64> {
        if means.iter().any(|m| !(*m > 0.0)) {
            return None;
        }
        let pts: Vec<(f64, f64)> = idx.iter().zip(means).map(|(&k, m)| (outcome.times[k], m.ln())).collect();
        Some(crate::symbol::slope(&pts))
    };
    let means: Vec<f64> = idx.iter().map(|&k| outcome.mean[k]).collect();
    let rate = fit(&means).ok_or_else(|| {
        Error::EstimationImpossible("mean population vanishes inside the fit window".into())
    })?;
    let trials = outcome.trials();
    let mut rng = ChaCha8Rng::seed_from_u64(outcome.seed ^ 0xb007_57a9);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_REPLICATES);
    for _ in 0..BOOTSTRAP_REPLICATES {
        let pick: Vec<usize> = (0..trials).map(|_| rng.gen_range(0..trials)).collect();
        let m: Vec<f64> = idx
            .iter()
            .map(|&k| {
                let (mut s, mut n) = (0.0, 0usize);
                for &i in &pick {
                    if let Some(p) = outcome.populations[i][k] {
                        s += p as f64;
                        n += 1;
                    }
                }
                if n > 0 { s / n as f64 } else { f64::NAN }
            })
            .collect();
        if let Some(s) = fit(&m) {
            slopes.push(s);
        }
    }
    let n = slopes.len() as f64;
    let mean = slopes.iter().sum::<f64>() / n.max(1.0);
    let var = slopes.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(GrowthEstimate { rate, std_error: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_source(d: usize) -> SourceConfiguration {
        SourceConfiguration::new(vec![LatticePoint::origin(d)], 1.0).unwrap()
    }

    #[test]
    fn law_beta() {
        assert_eq!(BranchingLaw::binary(1.3).unwrap().beta(), 1.3);
        assert_eq!(BranchingLaw::critical_binary(0.7).unwrap().beta(), 0.0);
        assert!(BranchingLaw::new(BTreeMap::from([(1, 1.0)])).is_err());
        assert!(BranchingLaw::new(BTreeMap::from([(3, -1.0)])).is_err());
        let l = BranchingLaw::new(BTreeMap::from([(0, 0.5), (3, 1.0)])).unwrap();
        assert_eq!(l.beta(), -0.5 + 2.0);
        assert_eq!(l.b1(), -1.5);
    }

    #[test]
    fn pure_walk_keeps_one_particle() {
        let k = JumpKernel::simple(2, 1.0).unwrap();
        let law = BranchingLaw::new(BTreeMap::new()).unwrap();
        let cfg = SimulationConfig { t_max: 5.0, trials: 20, ..Default::default() };
        let out = simulate_brw(&k, &one_source(2), &law, &cfg).unwrap();
        assert!(out.populations.iter().all(|r| r.iter().all(|p| *p == Some(1))));
    }

    #[test]
    fn tail_sampler_matches_power_law() {
        let t = TailSampler { s: 1.5, m: 5, cap: (1.2f64).powf(1.5) };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut c5 = 0usize;
        for _ in 0..n {
            if t.sample(&mut rng) == 5 {
                c5 += 1;
            }
        }
        let norm = crate::special::zeta(1.5) - (1..5).map(|k| (k as f64).powf(-1.5)).sum::<f64>();
        let p5 = 5f64.powf(-1.5) / norm;
        let se = (p5 * (1.0 - p5) / n as f64).sqrt();
        assert!(((c5 as f64 / n as f64) - p5).abs() < 4.0 * se);
    }

    #[test]
    fn excursion_tables_sum_to_return_probability() {
        // d = 1 simple walk: the embedded chain returns with probability 1;
        // within K_max jumps most of the mass is found
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let ex = Excursions::build(&k, &[[0; MAX_SIM_DIM]], None, 5.0).unwrap();
        let total = *ex.tables[0].cum.last().unwrap();
        // first return at 2 jumps has probability 1/2
        assert_eq!(ex.tables[0].outcomes[0], (2, 0));
        assert!((ex.tables[0].cum[0] - 0.5).abs() < 1e-15);
        assert!(total > 0.8 && total < 1.0);
    }

    #[test]
    fn synthetic_estimates() {
        let times: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let pops = vec![times.iter().map(|t| (1000.0 * (0.3 * t).exp()).round() as u64).collect::<Vec<_>>(); 5];
        let out = SimulationOutcome::from_populations(times.clone(), pops, 1).unwrap();
        let e = estimate_lambda0(&out, (0.0, 10.0)).unwrap();
        assert!((e.rate - 0.3).abs() < 1e-3 && e.std_error < 1e-12);
        let flat = SimulationOutcome::from_populations(times.clone(), vec![vec![4; 11]; 3], 1).unwrap();
        assert_eq!(estimate_lambda0(&flat, (2.0, 8.0)).unwrap().rate, 0.0);
        let dead = SimulationOutcome::from_populations(times, vec![vec![0; 11]; 3], 1).unwrap();
        assert!(matches!(estimate_lambda0(&dead, (2.0, 8.0)), Err(Error::EstimationImpossible(_))));
    }
}
