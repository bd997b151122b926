//! Experiment configuration files and their resolution into library inputs.

use crate::error::CliError;
use brw_core::lattice::{default_radius, DEFAULT_RADIUS_1D};
use brw_core::oracles::SimMethod;
use brw_core::{Angular, BranchingLaw, JumpKernel, LatticePoint, SourceConfiguration};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelSpec,
    pub sources: Option<SourcesSpec>,
    pub beta: Option<f64>,
    pub beta_sweep: Option<Grid>,
    pub lambdas: Option<Grid>,
    /// Displacements tabulated by `green`; the origin when absent.
    pub displacements: Option<Vec<Vec<i64>>>,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// `simple` or `heavy-tail`.
    pub builtin: Option<String>,
    /// Kernel text file, relative to the configuration file.
    pub file: Option<PathBuf>,
    pub dimension: Option<usize>,
    pub kappa: Option<f64>,
    pub alpha: Option<f64>,
    pub radius: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcesSpec {
    pub points: Option<Vec<Vec<i64>>>,
    pub simplex: Option<usize>,
}

/// Either an explicit list or `start`, `stop`, `count` with optional
/// logarithmic spacing.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range {
        start: f64,
        stop: f64,
        count: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Grid {
    pub fn values(&self, what: &str) -> Result<Vec<f64>, CliError> {
        let v = match self {
            Grid::List(v) => v.clone(),
            Grid::Range { start, stop, count, log } => {
                if *count == 0 {
                    return Err(CliError::config(format!("{what}: count must be positive")));
                }
                if *count > 1 && !(stop > start) {
                    return Err(CliError::config(format!("{what}: stop must exceed start")));
                }
                if *log && !(*start > 0.0) {
                    return Err(CliError::config(format!("{what}: logarithmic range needs start > 0")));
                }
                (0..*count)
                    .map(|k| {
                        if *count == 1 {
                            return *start;
                        }
                        let u = k as f64 / (*count - 1) as f64;
                        if *log {
                            (start.ln() + u * (stop / start).ln()).exp()
                        } else {
                            start + u * (stop - start)
                        }
                    })
                    .collect()
            }
        };
        if v.is_empty() {
            return Err(CliError::config(format!("{what} is empty")));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::config(format!("{what} contains a non-finite value")));
        }
        if v.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CliError::config(format!("{what} must be strictly increasing")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    /// Box radius of the truncated operator and the mean-field evolution.
    pub radius: usize,
    pub trials: usize,
    pub seed: u64,
    pub t_max: f64,
    pub dt: f64,
    /// Fit window for growth rates; `[t_max / 2, t_max]` when absent.
    pub window: Option<[f64; 2]>,
    pub pop_cap: u64,
    pub stepwise: bool,
    /// Branching rates by offspring count; binary splitting at `beta` when absent.
    pub law: Option<BTreeMap<String, f64>>,
    pub start: Option<Vec<i64>>,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            radius: 12,
            trials: 10_000,
            seed: 0,
            t_max: 20.0,
            dt: 0.5,
            window: None,
            pop_cap: 1_000_000,
            stepwise: false,
            law: None,
            start: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

/// Everything a command needs, with defaults filled in. Serialized into the
/// metadata of every output.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub kernel: KernelEcho,
    pub sources: Option<Vec<LatticePoint>>,
    pub simplex: Option<usize>,
    pub betas: Option<Vec<f64>>,
    pub lambdas: Option<Vec<f64>>,
    pub displacements: Vec<LatticePoint>,
    pub oracle: OracleEcho,
    #[serde(skip)]
    pub jump_kernel: JumpKernel,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelEcho {
    pub builtin: Option<String>,
    pub file: Option<PathBuf>,
    pub dimension: usize,
    pub kappa: Option<f64>,
    pub alpha: Option<f64>,
    pub radius: Option<usize>,
    pub hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleEcho {
    pub radius: usize,
    pub trials: usize,
    pub seed: u64,
    pub t_max: f64,
    pub dt: f64,
    pub window: [f64; 2],
    pub pop_cap: u64,
    pub stepwise: bool,
    pub law: Option<BTreeMap<String, f64>>,
    pub start: Option<LatticePoint>,
}

impl Resolved {
    pub fn dimension(&self) -> usize {
        self.kernel.dimension
    }

    pub fn sources(&self, beta: f64) -> Result<SourceConfiguration, CliError> {
        let pts = self.sources.clone().ok_or_else(|| CliError::config("no sources configured"))?;
        Ok(SourceConfiguration::new(pts, beta)?)
    }

    pub fn beta(&self) -> Result<f64, CliError> {
        match self.betas.as_deref() {
            Some([b]) => Ok(*b),
            Some(_) => Err(CliError::config("expected a single beta, not a sweep")),
            None => Err(CliError::config("beta is required")),
        }
    }

    pub fn lambdas(&self) -> Result<&[f64], CliError> {
        self.lambdas.as_deref().ok_or_else(|| CliError::config("lambdas are required"))
    }

    pub fn law(&self, beta: f64) -> Result<BranchingLaw, CliError> {
        match &self.oracle.law {
            None => Ok(BranchingLaw::binary(beta)?),
            Some(m) => {
                let mut rates = BTreeMap::new();
                for (k, v) in m {
                    let n: u32 = k
                        .parse()
                        .map_err(|_| CliError::config(format!("branching law key {k:?} is not an offspring count")))?;
                    rates.insert(n, *v);
                }
                Ok(BranchingLaw::new(rates)?)
            }
        }
    }

    pub fn method(&self) -> SimMethod {
        if self.oracle.stepwise {
            SimMethod::Stepwise
        } else {
            SimMethod::Auto
        }
    }
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn point(c: &[i64], d: usize, what: &str) -> Result<LatticePoint, CliError> {
    if c.len() != d {
        return Err(CliError::config(format!("{what} {c:?} does not have dimension {d}")));
    }
    Ok(LatticePoint::new(c.to_vec()))
}

fn build_kernel(spec: &KernelSpec, base: &Path) -> Result<(JumpKernel, KernelEcho), CliError> {
    let mut echo = KernelEcho {
        builtin: spec.builtin.clone(),
        file: spec.file.clone(),
        dimension: 0,
        kappa: None,
        alpha: None,
        radius: None,
        hash: String::new(),
    };
    let kernel = match (&spec.builtin, &spec.file) {
        (Some(_), Some(_)) => return Err(CliError::config("kernel: give either builtin or file, not both")),
        (None, None) => return Err(CliError::config("kernel: builtin or file is required")),
        (None, Some(f)) => {
            let path = base.join(f);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::config(format!("cannot read kernel {}: {e}", path.display())))?;
            let k = JumpKernel::from_text(&text)?;
            if let Some(d) = spec.dimension {
                if d != k.dimension() {
                    return Err(CliError::config(format!(
                        "kernel file has dimension {}, configuration says {d}",
                        k.dimension()
                    )));
                }
            }
            k
        }
        (Some(name), None) => {
            let d = spec.dimension.ok_or_else(|| CliError::config("kernel: dimension is required"))?;
            match name.as_str() {
                "simple" => {
                    let kappa = spec.kappa.unwrap_or(1.0);
                    echo.kappa = Some(kappa);
                    JumpKernel::simple(d, kappa)?
                }
                "heavy-tail" => {
                    let alpha = spec.alpha.ok_or_else(|| CliError::config("kernel: alpha is required"))?;
                    if !(alpha > 0.0 && alpha < 2.0) {
                        return Err(CliError::config(format!("kernel: alpha must lie in (0, 2), got {alpha}")));
                    }
                    let radius = spec
                        .radius
                        .unwrap_or_else(|| if d == 1 { DEFAULT_RADIUS_1D } else { default_radius(d, alpha) });
                    echo.alpha = Some(alpha);
                    echo.radius = Some(radius);
                    if d == 1 {
                        JumpKernel::heavy_tail_1d(alpha, radius)?
                    } else {
                        JumpKernel::heavy_tail(d, alpha, Angular::Constant(1.0), radius)?
                    }
                }
                other => return Err(CliError::config(format!("kernel: unknown builtin {other:?}"))),
            }
        }
    };
    echo.dimension = kernel.dimension();
    echo.hash = format!("{:016x}", kernel.content_hash());
    Ok((kernel, echo))
}

/// Validates and fills defaults. `base` is the directory of the configuration file.
pub fn resolve(cfg: &ExperimentConfig, base: &Path, seed: Option<u64>) -> Result<Resolved, CliError> {
    let (jump_kernel, kernel) = build_kernel(&cfg.kernel, base)?;
    let d = kernel.dimension;

    let (sources, simplex) = match &cfg.sources {
        None => (None, None),
        Some(SourcesSpec { points: Some(_), simplex: Some(_) }) => {
            return Err(CliError::config("sources: give either points or simplex, not both"))
        }
        Some(SourcesSpec { points: Some(p), simplex: None }) => {
            let pts = p.iter().map(|c| point(c, d, "source")).collect::<Result<Vec<_>, _>>()?;
            (Some(pts), None)
        }
        Some(SourcesSpec { points: None, simplex: Some(n) }) => {
            let s = SourceConfiguration::simplex(d, *n, 1.0)?;
            (Some(s.points().to_vec()), Some(*n))
        }
        Some(SourcesSpec { points: None, simplex: None }) => {
            return Err(CliError::config("sources: points or simplex is required"))
        }
    };
    if let Some(p) = &sources {
        SourceConfiguration::new(p.clone(), 1.0)?;
    }

    let betas = match (cfg.beta, &cfg.beta_sweep) {
        (Some(_), Some(_)) => return Err(CliError::config("give either beta or beta_sweep, not both")),
        (Some(b), None) => Some(vec![b]),
        (None, Some(g)) => Some(g.values("beta_sweep")?),
        (None, None) => None,
    };
    if let Some(b) = &betas {
        if b.iter().any(|x| *x < 0.0) {
            return Err(CliError::config("beta must be nonnegative"));
        }
    }
    let lambdas = cfg.lambdas.as_ref().map(|g| g.values("lambdas")).transpose()?;
    if let Some(l) = &lambdas {
        if l[0] < 0.0 {
            return Err(CliError::config("lambdas must be nonnegative"));
        }
    }
    let displacements = match &cfg.displacements {
        None => vec![LatticePoint::origin(d)],
        Some(v) if v.is_empty() => return Err(CliError::config("displacements is empty")),
        Some(v) => v.iter().map(|c| point(c, d, "displacement")).collect::<Result<_, _>>()?,
    };

    let o = &cfg.oracle;
    if !(o.t_max > 0.0 && o.dt > 0.0 && o.dt <= o.t_max) {
        return Err(CliError::config("oracle: need 0 < dt <= t_max"));
    }
    let window = o.window.unwrap_or([o.t_max / 2.0, o.t_max]);
    if !(window[0] >= 0.0 && window[1] > window[0] && window[1] <= o.t_max) {
        return Err(CliError::config("oracle: window must be increasing and inside [0, t_max]"));
    }
    let start = o.start.as_ref().map(|c| point(c, d, "start")).transpose()?;
    let oracle = OracleEcho {
        radius: o.radius,
        trials: o.trials,
        seed: seed.unwrap_or(o.seed),
        t_max: o.t_max,
        dt: o.dt,
        window,
        pop_cap: o.pop_cap,
        stepwise: o.stepwise,
        law: o.law.clone(),
        start,
    };
    Ok(Resolved { kernel, sources, simplex, betas, lambdas, displacements, oracle, jump_kernel })
}
