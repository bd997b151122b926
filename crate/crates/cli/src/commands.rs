use crate::config::Resolved;
use crate::error::CliError;
use brw_core::criticality::SpectralProblem;
use brw_core::gamma::gamma_curve;
use brw_core::lattice::fmt17;
use brw_core::oracles::{estimate_lambda0, evolve_m1, simulate_brw, GrowthEstimate, TruncatedOperator};
use brw_core::simplex::{simplex_betas, simplex_lambdas};
use brw_core::{GreenSolver, LatticePoint, SimplexConfiguration, SimulationConfig, SimulationOutcome};
use serde::Serialize;
use serde_json::{json, Value};
use std::path::PathBuf;
use std::sync::Arc;

/// Relative agreement required between the deterministic growth-rate estimates.
pub const DETERMINISTIC_RTOL: f64 = 0.02;
/// Standard errors allowed between the simulated slope and the Gamma-method rate.
pub const SIMULATION_SIGMAS: f64 = 3.0;

pub struct Output {
    pub dir: PathBuf,
}

impl Output {
    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", self.dir.display())))?;
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
    }

    /// Writes `{command, config, result}` as pretty JSON and returns the text.
    fn write_json(&self, name: &str, command: &str, cfg: &Resolved, result: Value) -> Result<String, CliError> {
        let doc = json!({ "command": command, "config": cfg, "result": result });
        let mut text = serde_json::to_string_pretty(&doc).expect("JSON values serialize");
        text.push('\n');
        self.write(name, &text)?;
        Ok(text)
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

fn solver(cfg: &Resolved) -> Arc<GreenSolver> {
    Arc::new(GreenSolver::new(&cfg.jump_kernel))
}

fn coords(x: &LatticePoint) -> String {
    x.coords().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn green(cfg: &Resolved, out: &Output) -> Result<String, CliError> {
    let s = solver(cfg);
    let mut csv = String::from("lambda,x,value,error,divergent\n");
    let mut divergent = 0usize;
    for &l in cfg.lambdas()? {
        let values = if l == 0.0 { s.green_zero_many(&cfg.displacements)? } else { s.green_many(l, &cfg.displacements)? };
        for v in values {
            divergent += v.divergent as usize;
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt17(l),
                coords(&v.displacement),
                fmt17(v.value),
                fmt17(v.estimated_abs_error),
                v.divergent as u8
            ));
        }
    }
    out.write("green.csv", &csv)?;
    let rows = cfg.lambdas()?.len() * cfg.displacements.len();
    out.write_json("green.json", "green", cfg, json!({ "rows": rows, "divergent_rows": divergent, "csv": "green.csv" }))
}

pub fn gamma_curve_cmd(cfg: &Resolved, out: &Output) -> Result<String, CliError> {
    let src = cfg.sources(1.0)?;
    let curve = gamma_curve(&solver(cfg), &src, cfg.lambdas()?)?;
    out.write("gamma_curve.csv", &curve.to_csv())?;
    out.write_json(
        "gamma_curve.json",
        "gamma-curve",
        cfg,
        json!({ "points": curve.lambdas.len(), "branches": src.len(), "csv": "gamma_curve.csv" }),
    )
}

pub fn spectrum(cfg: &Resolved, out: &Output) -> Result<String, CliError> {
    let betas = cfg.betas.as_ref().ok_or_else(|| CliError::config("beta or beta_sweep is required"))?;
    let src = cfg.sources(betas[0])?;
    let n = src.len();
    let p = SpectralProblem::with_solver(solver(cfg), src)?;
    if betas.len() == 1 {
        let report = p.report(betas[0])?;
        return out.write_json("spectrum.json", "spectrum", cfg, to_value(&report));
    }
    let mut csv = String::from("beta,count");
    for i in 0..n {
        csv.push_str(&format!(",lambda_{i}"));
    }
    for i in 0..n {
        csv.push_str(&format!(",multiplicity_{i}"));
    }
    csv.push('\n');
    let mut spectra = Vec::with_capacity(betas.len());
    for &b in betas {
        let r = p.spectrum(b)?;
        csv.push_str(&format!("{},{}", fmt17(b), r.total_count));
        for i in 0..n {
            csv.push(',');
            if let Some(e) = r.eigenvalues.get(i) {
                csv.push_str(&fmt17(e.value));
            }
        }
        for i in 0..n {
            csv.push(',');
            if let Some(e) = r.eigenvalues.get(i) {
                csv.push_str(&e.multiplicity.to_string());
            }
        }
        csv.push('\n');
        spectra.push(r);
    }
    out.write("spectrum_sweep.csv", &csv)?;
    let crit = p.critical_intensities()?;
    out.write_json(
        "spectrum.json",
        "spectrum",
        cfg,
        json!({ "critical": to_value(&crit), "spectra": to_value(&spectra), "csv": "spectrum_sweep.csv" }),
    )
}

pub fn critical(cfg: &Resolved, out: &Output) -> Result<String, CliError> {
    let s = solver(cfg);
    let src = cfg.sources(1.0)?;
    let n = src.len();
    let p = SpectralProblem::with_solver(s.clone(), src)?;
    let crit = p.critical_intensities()?;
    let g0 = s.green_zero(&LatticePoint::origin(cfg.dimension()))?;
    let inverse_g0 = if g0.divergent { 0.0 } else { 1.0 / g0.value };
    let below = (n >= 2 && !g0.divergent).then(|| crit.beta_c < inverse_g0);
    out.write_json(
        "critical.json",
        "critical",
        cfg,
        json!({
            "critical": to_value(&crit),
            "g0": finite_or_null(g0.value),
            "g0_divergent": g0.divergent,
            "inverse_g0": inverse_g0,
            "beta_c_below_inverse_g0": below,
        }),
    )
}

pub fn simplex(cfg: &Resolved, out: &Output) -> Result<String, CliError> {
    let n = cfg.simplex.ok_or_else(|| CliError::config("simplex requires sources.simplex = N"))?;
    let s = solver(cfg);
    let sc = SimplexConfiguration::new(cfg.dimension(), n)?;
    let betas = simplex_betas(&s, &sc)?;
    let lambdas = match &cfg.betas {
        None => None,
        Some(_) => Some(simplex_lambdas(&s, &sc, cfg.beta()?)?),
    };
    out.write_json(
        "simplex.json",
        "simplex",
        cfg,
        json!({
            "beta_c": betas.beta_c,
            "beta_c1": betas.beta_c1,
            "g0": finite_or_null(betas.g0),
            "g0_zstar": finite_or_null(betas.g0_zstar),
            "extrapolated": betas.extrapolated,
            "z_star": sc.z_star(),
            "lambdas": lambdas.map(|l| to_value(&l)),
        }),
    )
}

fn sim_config(cfg: &Resolved) -> SimulationConfig {
    let o = &cfg.oracle;
    SimulationConfig {
        t_max: o.t_max,
        dt: o.dt,
        trials: o.trials,
        seed: o.seed,
        pop_cap: o.pop_cap,
        start: o.start.clone(),
        method: cfg.method(),
        site_radius: None,
    }
}

fn run_simulation(cfg: &Resolved) -> Result<SimulationOutcome, CliError> {
    let beta = match (&cfg.betas, &cfg.oracle.law) {
        (Some(_), _) => cfg.beta()?,
        (None, Some(_)) => cfg.law(0.0)?.beta(),
        (None, None) => return Err(CliError::config("simulate needs beta or oracle.law")),
    };
    let law = cfg.law(beta)?;
    let src = cfg.sources(beta)?;
    Ok(simulate_brw(&cfg.jump_kernel, &src, &law, &sim_config(cfg))?)
}

fn growth_json(g: &Result<GrowthEstimate, CliError>) -> Value {
    match g {
        Ok(g) => json!({ "rate": g.rate, "std_error": g.std_error }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

pub fn simulate(cfg: &Resolved, out: &Output) -> Result<String, CliError> {
    let outcome = run_simulation(cfg)?;
    out.write("simulation.csv", &outcome.to_csv())?;
    let w = cfg.oracle.window;
    let growth = estimate_lambda0(&outcome, (w[0], w[1])).map_err(CliError::from);
    out.write_json(
        "simulation.json",
        "simulate",
        cfg,
        json!({ "metadata": outcome.metadata(), "growth": growth_json(&growth), "csv": "simulation.csv" }),
    )
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn oracle_compare(cfg: &Resolved, out: &Output) -> Result<String, CliError> {
    let beta = cfg.beta()?;
    let src = cfg.sources(beta)?;
    let o = &cfg.oracle;
    let p = SpectralProblem::with_solver(solver(cfg), src.clone())?;
    let gamma_method = p.spectrum(beta)?.lambda0();
    let truncated = TruncatedOperator::new(&cfg.jump_kernel, &src, beta, o.radius)?.top_eigs(1)?[0];
    let steps = (o.t_max / o.dt).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * o.dt).collect();
    let y = o.start.clone().unwrap_or_else(|| src.points()[0].clone());
    let m1 = evolve_m1(&cfg.jump_kernel, &src, beta, &y, &times, o.radius)?;
    let evolution = m1.log_slope(o.window[0], o.window[1])?;
    let simulation = if o.trials > 0 {
        let outcome = run_simulation(cfg)?;
        Some((estimate_lambda0(&outcome, (o.window[0], o.window[1])).map_err(CliError::from), outcome))
    } else {
        None
    };

    let mut warnings: Vec<String> = Vec::new();
    let mut flags = serde_json::Map::new();
    match gamma_method {
        Some(l0) => {
            let pairs = [
                ("gamma_vs_truncated", l0, truncated),
                ("gamma_vs_evolution", l0, evolution),
                ("truncated_vs_evolution", truncated, evolution),
            ];
            for (name, a, b) in pairs {
                let gap = relative_gap(a, b);
                let ok = gap <= DETERMINISTIC_RTOL;
                if !ok {
                    warnings.push(format!("{name}: relative difference {gap:.3e} exceeds {DETERMINISTIC_RTOL}"));
                }
                flags.insert(name.into(), json!({ "relative_difference": gap, "agree": ok }));
            }
            if let Some((Ok(g), _)) = &simulation {
                let sigmas = (g.rate - l0).abs() / g.std_error.max(f64::MIN_POSITIVE);
                let ok = sigmas <= SIMULATION_SIGMAS;
                if !ok {
                    warnings.push(format!("simulation slope is {sigmas:.2} standard errors from lambda_0"));
                }
                flags.insert("simulation_vs_gamma".into(), json!({ "standard_errors": sigmas, "agree": ok }));
            }
        }
        None => {
            let ok = truncated <= 1e-9;
            if !ok {
                warnings.push(format!("empty spectrum but truncated top eigenvalue {truncated:.3e} > 0"));
            }
            flags.insert("truncated_below_edge".into(), json!(ok));
            let mid = 0.5 * (o.window[0] + o.window[1]);
            let early = m1.log_slope(o.window[0], mid)?;
            let late = m1.log_slope(mid, o.window[1])?;
            let ok = late <= early;
            if !ok {
                warnings.push(format!("empty spectrum but mean-field slope grows from {early:.3e} to {late:.3e}"));
            }
            flags.insert("evolution_decelerating".into(), json!(ok));
            if let Some((Ok(g), _)) = &simulation {
                let sigmas = (g.rate - evolution).abs() / g.std_error.max(f64::MIN_POSITIVE);
                let ok = sigmas <= SIMULATION_SIGMAS;
                if !ok {
                    warnings.push(format!("simulation slope is {sigmas:.2} standard errors from the mean-field slope"));
                }
                flags.insert("simulation_vs_evolution".into(), json!({ "standard_errors": sigmas, "agree": ok }));
            }
        }
    }
    if let Some((Err(e), _)) = &simulation {
        warnings.push(format!("simulation slope unavailable: {e}"));
    }
    if let Some((_, outcome)) = &simulation {
        if outcome.unreliable {
            warnings.push("simulation hit the population cap in too many trials".into());
        }
    }
    let result = json!({
        "beta": beta,
        "gamma_method": gamma_method,
        "truncated": { "radius": o.radius, "top_eigenvalue": truncated },
        "evolution": { "radius": o.radius, "window": o.window, "slope": evolution },
        "simulation": simulation.as_ref().map(|(g, outcome)| json!({
            "growth": growth_json(g),
            "metadata": outcome.metadata(),
        })),
        "agreement": flags,
        "warning": if warnings.is_empty() { Value::Null } else { json!(warnings.join("; ")) },
    });
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    out.write_json("oracle_compare.json", "oracle-compare", cfg, result)
}
