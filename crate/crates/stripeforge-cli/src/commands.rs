//! One pipeline per subcommand.

use crate::config::{err, Config, ConfigError};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use stripeforge::decompose::{lower_bound_report_with, ReportOptions};
use stripeforge::energy::{gamma_gap_decreasing, gamma_trend, gamma_trend_csv};
use stripeforge::io::{load_field, save_field, Format};
use stripeforge::kernel::KernelTable;
use stripeforge::minimize::{
    best_of, final_energy, minimize_restarts, one_dimensionality_report, period_warning, write_restart_outputs,
    MinimizeOptions, StepRule,
};
use stripeforge::onedim::{OneDimSolver, SolverOptions};
use stripeforge::stripes::{classify_cubes_threaded, stripe_fit_distance};
use stripeforge::verify::{run_suite, Fault, Regime, VerifyConfig};
use stripeforge::{make_random_field, Field64, Params64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve1d,
    Minimize,
    Decompose,
    Stripedist,
    Classify,
    Verify,
    GammaCheck,
}

/// Why a run stopped early.
#[derive(Debug)]
pub enum Failure {
    /// Usage or configuration problem (exit 2).
    Config(ConfigError),
    /// The pipeline itself failed (exit 1).
    Run(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<stripeforge::Error> for Failure {
    fn from(e: stripeforge::Error) -> Self {
        match e {
            stripeforge::Error::Param { key, reason } => Failure::Config(err(qualify(key), reason)),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

const PARAM_KEYS: [&str; 6] = ["d", "p", "tau", "eps", "L", "n_per_unit"];

fn qualify(key: &str) -> String {
    match key {
        "d" | "p" | "tau" | "eps" | "n_per_unit" => format!("params.{key}"),
        "box_len" | "L" => "params.L".into(),
        other => other.to_string(),
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    /// Files written into the run directory, by name.
    pub outputs: Vec<String>,
    /// Files not expected to reproduce bit for bit.
    pub volatile: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub check_failed: bool,
    /// Short text echoed to stdout.
    pub summary: String,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Solve1d => "solve1d",
            Self::Minimize => "minimize",
            Self::Decompose => "decompose",
            Self::Stripedist => "stripedist",
            Self::Classify => "classify",
            Self::Verify => "verify",
            Self::GammaCheck => "gamma-check",
        }
    }

    /// Config section of the command's own keys.
    pub fn section(self) -> &'static str {
        match self {
            Self::GammaCheck => "gamma",
            other => other.name(),
        }
    }

    pub fn has_params(self) -> bool {
        self != Self::Verify
    }

    pub fn defaults(self) -> Vec<(String, String)> {
        let params: [&str; 6] = match self {
            Self::Solve1d => ["1", "3", "0.05", "0.05", "1", "200"],
            Self::GammaCheck => ["1", "3", "0.05", "0.2", "0.4", "3200"],
            Self::Verify => [""; 6],
            _ => ["2", "4", "0.5", "0.1", "2.5", "8"],
        };
        let own: Vec<(String, String)> = match self {
            Self::Solve1d => owned(&[
                ("h_min", "0.05"),
                ("h_max", "2"),
                ("coarse_points", "16"),
                ("max_iters", "50000"),
                ("grad_tol", "1e-10"),
                ("energy_tol", "1e-15"),
            ]),
            Self::Minimize => owned(&[
                ("restarts", "4"),
                ("seed", "1"),
                ("max_iters", "5000"),
                ("grad_tol", "1e-7"),
                ("energy_tol", "1e-13"),
                ("step_rule", "bb"),
                ("restart_smoothness", ""),
                ("h_star", ""),
                ("h_min", "0.2"),
                ("h_max", "5"),
                ("oned_tol", "0.01"),
            ]),
            Self::Decompose => owned(&[
                ("field", ""),
                ("seed", "1"),
                ("smoothness", ""),
                ("l", ""),
                ("stride", "0"),
            ]),
            Self::Stripedist => owned(&[
                ("field", ""),
                ("seed", "1"),
                ("smoothness", ""),
                ("eta", ""),
                ("corner", ""),
                ("l", ""),
            ]),
            Self::Classify => owned(&[
                ("field", ""),
                ("seed", "1"),
                ("smoothness", ""),
                ("l", ""),
                ("eta", ""),
                ("sigma", "0.05"),
                ("stride", ""),
            ]),
            Self::Verify => return with_params(self, &params, verify_defaults()),
            Self::GammaCheck => owned(&[
                ("eps_sequence", "0.2,0.1,0.05,0.025"),
                ("half_period", ""),
                ("axis", "0"),
                ("max_final_gap", "0.1"),
            ]),
        };
        with_params(self, &params, own)
    }

    pub fn run(self, cfg: &mut Config, dir: &Path, threads: usize) -> Result<Outcome, Failure> {
        match self {
            Self::Solve1d => solve1d(cfg, dir),
            Self::Minimize => minimize(cfg, dir, threads),
            Self::Decompose => decompose(cfg, dir, threads),
            Self::Stripedist => stripedist(cfg, dir),
            Self::Classify => classify(cfg, dir, threads),
            Self::Verify => verify(cfg, dir, threads),
            Self::GammaCheck => gamma(cfg, dir),
        }
    }
}

fn with_params(cmd: Command, params: &[&str; 6], own: Vec<(String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    if cmd.has_params() {
        for (k, v) in PARAM_KEYS.iter().zip(params) {
            out.push((format!("params.{k}"), v.to_string()));
        }
    }
    for (k, v) in own {
        out.push((format!("{}.{k}", cmd.section()), v));
    }
    out
}

fn owned(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn regime_keys(prefix: &str, r: &Regime) -> Vec<(String, String)> {
    vec![
        (format!("{prefix}_p"), r.p.to_string()),
        (format!("{prefix}_tau"), r.tau.to_string()),
        (format!("{prefix}_eps"), r.eps.to_string()),
    ]
}

fn verify_defaults() -> Vec<(String, String)> {
    let v = VerifyConfig::default();
    let opt = |x: Option<f64>| x.map(|x| x.to_string()).unwrap_or_default();
    let mut out: Vec<(String, String)> = [
        ("upsilon", v.upsilon.to_string()),
        ("eta0", opt(v.eta0)),
        ("delta0", opt(v.delta0)),
        ("delta", v.delta.to_string()),
        ("sigma", v.sigma.to_string()),
        ("nu", v.nu.to_string()),
        ("cube_fraction", v.cube_fraction.to_string()),
        ("seeds", join(&v.seeds)),
        ("sizes_1d", join(&v.sizes_1d)),
        ("sizes_2d", join(&v.sizes_2d)),
        ("eta0_cells", v.eta0_cells.to_string()),
        ("lemma_sizes", join(&v.lemma_sizes)),
        ("h_star_1d", opt(v.h_star_1d)),
        ("h_star_2d", opt(v.h_star_2d)),
        ("default_tolerance", v.default_tolerance.to_string()),
        ("stability_factor", v.stability_factor.to_string()),
        ("fault", "none".to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    for (prefix, r) in [("lemma", &v.lemma), ("energy_1d", &v.energy_1d), ("energy_2d", &v.energy_2d)] {
        out.extend(regime_keys(prefix, r));
    }
    out
}

fn params_from(cfg: &Config) -> Result<Params64, Failure> {
    Ok(Params64::new(
        cfg.get("params.d")?,
        cfg.get("params.p")?,
        cfg.get("params.tau")?,
        cfg.get("params.eps")?,
        cfg.get("params.L")?,
        cfg.get("params.n_per_unit")?,
    )?)
}

/// Field from `<section>.field`, or a seeded random field. A loaded field
/// fixes the physical parameters; explicitly set ones must agree with it.
fn input_field(cfg: &mut Config, section: &str, out: &mut Outcome) -> Result<Field64, Failure> {
    let path = cfg.raw(&format!("{section}.field")).to_string();
    if path.is_empty() {
        let params = params_from(cfg)?;
        let key = format!("{section}.smoothness");
        let sm = cfg.opt::<f64>(&key)?.unwrap_or(params.box_len() / 8.0);
        let seed: u64 = cfg.get(&format!("{section}.seed"))?;
        return Ok(make_random_field(&params, seed, sm).map_err(|e| rekey(e, &key))?);
    }
    let field: Field64 = load_field(Path::new(&path)).map_err(|e| match e {
        stripeforge::Error::Io(io) => Failure::Config(err(format!("{section}.field"), format!("{path}: {io}"))),
        other => Failure::Config(err(format!("{section}.field"), other.to_string())),
    })?;
    let p = field.params();
    let actual = [
        ("params.d", p.d() as f64),
        ("params.p", p.p()),
        ("params.tau", p.tau()),
        ("params.eps", p.eps()),
        ("params.L", p.box_len()),
        ("params.n_per_unit", p.n_per_unit()),
    ];
    for (key, value) in actual {
        if cfg.is_explicit(key) {
            let want: f64 = cfg.get(key)?;
            if (want - value).abs() > 1e-12 * value.abs().max(1.0) {
                return Err(Failure::Config(err(key, format!("{want} conflicts with {value} in field file {path}"))));
            }
        }
    }
    for (key, value) in actual {
        cfg.set(key, &value.to_string())?;
    }
    out.inputs.push(PathBuf::from(path));
    Ok(field)
}

fn rekey(e: stripeforge::Error, key: &str) -> Failure {
    match e {
        stripeforge::Error::Param { reason, .. } => Failure::Config(err(key, reason)),
        other => other.into(),
    }
}

fn write(dir: &Path, name: &str, text: &str, out: &mut Outcome) -> Result<(), Failure> {
    std::fs::write(dir.join(name), text)?;
    out.outputs.push(name.to_string());
    Ok(())
}

fn solve1d(cfg: &mut Config, dir: &Path) -> Result<Outcome, Failure> {
    let params = params_from(cfg)?;
    let opts = SolverOptions {
        max_iters: cfg.get("solve1d.max_iters")?,
        grad_tol: cfg.get("solve1d.grad_tol")?,
        energy_tol: cfg.get("solve1d.energy_tol")?,
        coarse_points: cfg.get("solve1d.coarse_points")?,
    };
    let h_min: f64 = cfg.get("solve1d.h_min")?;
    let h_max: f64 = cfg.get("solve1d.h_max")?;
    let mut solver = OneDimSolver::new(&params, opts).map_err(|e| rekey(e, "solve1d.max_iters"))?;
    let r = solver.sweep(h_min, h_max).map_err(|e| match e {
        stripeforge::Error::Param { key, reason } => Failure::Config(err(format!("solve1d.{key}"), reason)),
        other => other.into(),
    })?;
    let mut out = Outcome::default();
    write(dir, "search_trace.csv", &r.search_trace_csv(), &mut out)?;
    let period = params.with_box_len(2.0 * r.h_star)?;
    let profile = r.profile.to_field(&period, 0)?;
    save_field(&profile, &dir.join("profile_field.csv"), Format::Csv)?;
    out.outputs.push("profile_field.csv".into());
    let mut s = String::new();
    let _ = writeln!(s, "h_star = {:.17e}", r.h_star);
    let _ = writeln!(s, "c_star = {:.17e}", r.c_star);
    let _ = writeln!(s, "symmetry_residual = {:e}", r.profile.symmetry_residual);
    let _ = writeln!(s, "converged = {}", r.profile.converged);
    let _ = writeln!(s, "interior = {}", r.interior);
    let _ = writeln!(s, "grid_level = {}", r.grid_level);
    write(dir, "summary.txt", &s, &mut out)?;
    if !r.interior {
        out.warnings.push(format!(
            "lowest energy at the bracket edge h = {} of [{h_min}, {h_max}]; no interior optimal period found",
            r.h_star
        ));
    }
    out.summary = s;
    Ok(out)
}

fn step_rule(cfg: &Config) -> Result<StepRule, ConfigError> {
    let key = "minimize.step_rule";
    match cfg.raw(key) {
        "bb" => Ok(StepRule::BarzilaiBorwein),
        "backtracking" => Ok(StepRule::Backtracking),
        other => match other.strip_prefix("fixed:").map(str::parse::<f64>) {
            Some(Ok(s)) => Ok(StepRule::Fixed(s)),
            _ => Err(err(key, format!("expected bb, backtracking or fixed:<step>, got {other:?}"))),
        },
    }
}

fn minimize(cfg: &mut Config, dir: &Path, threads: usize) -> Result<Outcome, Failure> {
    let params = params_from(cfg)?;
    let opts = MinimizeOptions {
        max_iters: cfg.get("minimize.max_iters")?,
        step_rule: step_rule(cfg)?,
        grad_tol: cfg.get("minimize.grad_tol")?,
        energy_tol: cfg.get("minimize.energy_tol")?,
        seed: cfg.get("minimize.seed")?,
        restarts: cfg.get("minimize.restarts")?,
        restart_smoothness: cfg.opt("minimize.restart_smoothness")?,
        threads,
    };
    opts.validate().map_err(|e| match e {
        stripeforge::Error::Param { key, reason } => Failure::Config(err(format!("minimize.{key}"), reason)),
        other => other.into(),
    })?;
    let mut out = Outcome::default();
    let h_star = match cfg.opt::<f64>("minimize.h_star")? {
        Some(h) => h,
        None => {
            let r = OneDimSolver::new(&params, SolverOptions::default())?
                .sweep(cfg.get("minimize.h_min")?, cfg.get("minimize.h_max")?)?;
            if !r.interior {
                out.warnings.push(format!("1D search ended at the bracket edge h = {}", r.h_star));
            }
            cfg.set("minimize.h_star", &format!("{:e}", r.h_star))?;
            r.h_star
        }
    };
    if let Some(w) = period_warning(&params, h_star) {
        out.warnings.push(w);
    }
    let table = KernelTable::new(&params)?;
    let results = minimize_restarts(&params, &opts, &table)?;
    for (k, r) in results.iter().enumerate() {
        for p in write_restart_outputs(dir, k, r)? {
            out.outputs.push(p.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    let best = best_of(&results).expect("at least one restart");
    save_field(&best.field, &dir.join("best_field.bin"), Format::Binary)?;
    out.outputs.push("best_field.bin".into());
    let rep = one_dimensionality_report(&best.field, cfg.get("minimize.oned_tol")?);
    let mut s = String::new();
    let _ = writeln!(s, "h_star = {h_star:e}");
    let _ = writeln!(s, "best_restart = {}", best.best_restart);
    let _ = writeln!(s, "best_energy = {:.17e}", final_energy(best, &table));
    let _ = writeln!(s, "converged = {}", best.converged);
    let _ = writeln!(s, "iterations = {}", best.iterations);
    let _ = writeln!(s, "one_dimensional = {}", rep.is_1d);
    if let Some(i) = rep.direction {
        let _ = writeln!(s, "direction = {i}");
    }
    let _ = writeln!(s, "deviation = {}", join(&rep.deviation.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>()));
    let mut csv = String::from("restart,final_energy,iterations,converged\n");
    for (k, r) in results.iter().enumerate() {
        let _ = writeln!(csv, "{k},{:.17e},{},{}", final_energy(r, &table), r.iterations, r.converged);
    }
    write(dir, "restarts.csv", &csv, &mut out)?;
    write(dir, "summary.txt", &s, &mut out)?;
    out.summary = s;
    Ok(out)
}

fn decompose(cfg: &mut Config, dir: &Path, threads: usize) -> Result<Outcome, Failure> {
    let mut out = Outcome::default();
    let field = input_field(cfg, "decompose", &mut out)?;
    let l = cfg.opt::<f64>("decompose.l")?.unwrap_or(field.params().box_len() / 4.0);
    let opts = ReportOptions {
        stride: cfg.get("decompose.stride")?,
        threads,
    };
    let table = KernelTable::new(field.params())?;
    let rep = lower_bound_report_with(&field, l, &table, &opts).map_err(|e| rekey(e, "decompose.l"))?;
    write(dir, "decomposition.csv", &rep.to_csv(), &mut out)?;
    write(dir, "decomposition.txt", &rep.summary(), &mut out)?;
    out.check_failed = !rep.holds() || rep.min_v() < 0.0 || rep.min_w() < 0.0;
    out.summary = rep.summary();
    Ok(out)
}

fn stripedist(cfg: &mut Config, dir: &Path) -> Result<Outcome, Failure> {
    let mut out = Outcome::default();
    let field = input_field(cfg, "stripedist", &mut out)?;
    let p = field.params();
    let l = cfg.opt::<f64>("stripedist.l")?.unwrap_or(p.box_len() / 2.0);
    let eta = cfg.opt::<f64>("stripedist.eta")?.unwrap_or(l / 8.0);
    let mut corner: Vec<f64> = cfg.list("stripedist.corner")?;
    if corner.is_empty() {
        corner = vec![0.0; p.d()];
    }
    if corner.len() != p.d() {
        return Err(Failure::Config(err("stripedist.corner", format!("need {} coordinates", p.d()))));
    }
    let mut csv = String::from("direction,distance,admissible,starts_inside,transitions\n");
    let mut best = (f64::INFINITY, 0);
    for i in 0..p.d() {
        let f = stripe_fit_distance(&field, i, (&corner, l), eta).map_err(|e| match e {
            stripeforge::Error::Param { key, reason } => Failure::Config(err(format!("stripedist.{key}"), reason)),
            other => other.into(),
        })?;
        let tr: Vec<String> = f.transitions.iter().map(|t| format!("{t:e}")).collect();
        let _ = writeln!(csv, "{i},{:e},{},{},{}", f.distance, f.admissible, f.starts_inside, tr.join(";"));
        if f.distance < best.0 {
            best = (f.distance, i);
        }
    }
    write(dir, "stripedist.csv", &csv, &mut out)?;
    let s = format!("distance = {:e}\ndirection = {}\neta = {eta}\ncube_side = {l}\n", best.0, best.1);
    write(dir, "summary.txt", &s, &mut out)?;
    out.summary = s;
    Ok(out)
}

fn classify(cfg: &mut Config, dir: &Path, threads: usize) -> Result<Outcome, Failure> {
    let mut out = Outcome::default();
    let field = input_field(cfg, "classify", &mut out)?;
    let l = cfg.opt::<f64>("classify.l")?.unwrap_or(field.params().box_len() / 4.0);
    let eta = cfg.opt::<f64>("classify.eta")?.unwrap_or(l / 4.0);
    let stride = cfg.opt::<f64>("classify.stride")?.unwrap_or(l / 2.0);
    let c = classify_cubes_threaded(&field, l, eta, cfg.get("classify.sigma")?, stride, threads).map_err(|e| match e {
        stripeforge::Error::Param { key, reason } => Failure::Config(err(format!("classify.{key}"), reason)),
        other => other.into(),
    })?;
    write(dir, "classification.csv", &c.to_csv(), &mut out)?;
    write(dir, "summary.txt", &c.summary(), &mut out)?;
    out.summary = c.summary();
    Ok(out)
}

fn verify(cfg: &mut Config, dir: &Path, threads: usize) -> Result<Outcome, Failure> {
    let regime = |prefix: &str| -> Result<Regime, ConfigError> {
        Ok(Regime {
            p: cfg.get(&format!("verify.{prefix}_p"))?,
            tau: cfg.get(&format!("verify.{prefix}_tau"))?,
            eps: cfg.get(&format!("verify.{prefix}_eps"))?,
        })
    };
    let fault = match cfg.raw("verify.fault") {
        "none" => None,
        "cubic-omega" => Some(Fault::CubicOmega),
        other => return Err(Failure::Config(err("verify.fault", format!("expected none or cubic-omega, got {other:?}")))),
    };
    let vc = VerifyConfig {
        upsilon: cfg.get("verify.upsilon")?,
        eta0: cfg.opt("verify.eta0")?,
        delta0: cfg.opt("verify.delta0")?,
        delta: cfg.get("verify.delta")?,
        sigma: cfg.get("verify.sigma")?,
        nu: cfg.get("verify.nu")?,
        cube_fraction: cfg.get("verify.cube_fraction")?,
        seeds: cfg.list("verify.seeds")?,
        sizes_1d: cfg.list("verify.sizes_1d")?,
        sizes_2d: cfg.list("verify.sizes_2d")?,
        eta0_cells: cfg.get("verify.eta0_cells")?,
        lemma_sizes: cfg.list("verify.lemma_sizes")?,
        lemma: regime("lemma")?,
        energy_1d: regime("energy_1d")?,
        energy_2d: regime("energy_2d")?,
        h_star_1d: cfg.opt("verify.h_star_1d")?,
        h_star_2d: cfg.opt("verify.h_star_2d")?,
        default_tolerance: cfg.get("verify.default_tolerance")?,
        stability_factor: cfg.get("verify.stability_factor")?,
        threads,
        fault,
        ..VerifyConfig::default()
    };
    let report = run_suite(&vc).map_err(|e| match e {
        stripeforge::Error::Param { key, reason } => Failure::Config(err(format!("verify.{key}"), reason)),
        other => other.into(),
    })?;
    report.write(dir)?;
    let mut out = Outcome {
        outputs: vec!["verify.txt".into(), "verify.csv".into()],
        volatile: vec!["verify_timing.csv".into()],
        ..Outcome::default()
    };
    out.check_failed = !report.pass;
    out.summary = format!(
        "checks = {}\nhard_failures = {}\nresult = {}\n",
        report.checks.len(),
        report.hard_failures(),
        if report.pass { "pass" } else { "FAIL" }
    );
    Ok(out)
}

fn gamma(cfg: &mut Config, dir: &Path) -> Result<Outcome, Failure> {
    let params = params_from(cfg)?;
    let eps: Vec<f64> = cfg.list("gamma.eps_sequence")?;
    if eps.len() < 2 {
        return Err(Failure::Config(err("gamma.eps_sequence", "need at least two values")));
    }
    let h = cfg.opt::<f64>("gamma.half_period")?.unwrap_or(params.offset());
    let axis: usize = cfg.get("gamma.axis")?;
    let max_gap: f64 = cfg.get("gamma.max_final_gap")?;
    let pts = gamma_trend(&params, axis, h, &eps).map_err(|e| match e {
        stripeforge::Error::Param { key: "half_period", reason } => Failure::Config(err("gamma.half_period", reason)),
        stripeforge::Error::Param { key: "direction", reason } => Failure::Config(err("gamma.axis", reason)),
        other => other.into(),
    })?;
    let mut out = Outcome::default();
    write(dir, "gamma.csv", &gamma_trend_csv(&pts), &mut out)?;
    let decreasing = gamma_gap_decreasing(&pts);
    let last = pts.last().unwrap().relative_gap;
    out.check_failed = !decreasing || !(last < max_gap);
    let s = format!(
        "half_period = {h:e}\ndecreasing = {decreasing}\nfinal_gap = {last:e}\nmax_final_gap = {max_gap}\nresult = {}\n",
        if out.check_failed { "FAIL" } else { "pass" }
    );
    write(dir, "summary.txt", &s, &mut out)?;
    out.summary = s;
    Ok(out)
}
