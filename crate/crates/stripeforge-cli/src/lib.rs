//! Command-line front end for `stripeforge`.
//!
//! Every run resolves a configuration (command defaults, then `--config`,
//! then flags), executes one pipeline into a fresh timestamped directory under
//! `--out` and writes `manifest.txt` there. Exit status: 0 on success, 1 when a
//! check fails or the pipeline errors, 2 on usage or configuration errors.

pub mod commands;
pub mod config;
pub mod manifest;

use clap::{Args, Parser, Subcommand};
use commands::{Command, Failure};
use config::{err, Config, ConfigError};
use manifest::{file_hash, RunManifest};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub const THREADS_ENV: &str = "STRIPEFORGE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "stripeforge", version, about = "Diffuse-interface stripe energies on periodic tori")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Optimal 1D period and profile.
    Solve1d(Common),
    /// Projected gradient descent from random restarts.
    Minimize(Common),
    /// Slice decomposition lower bound of a field.
    Decompose(Common),
    /// Distance of a field from unions of stripes on one cube.
    Stripedist(Common),
    /// Cube classification of a field.
    Classify(Common),
    /// Property suite.
    Verify(Common),
    /// Diffuse against sharp-interface energy of a stripe along an eps sequence.
    GammaCheck(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Config file, or `default` for the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parent of the run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Worker threads (falls back to STRIPEFORGE_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    d: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    p: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    eps: Option<String>,
    /// Box side.
    #[arg(long = "L", allow_hyphen_values = true)]
    box_len: Option<String>,
    /// Grid cells per unit length.
    #[arg(long = "n", allow_hyphen_values = true)]
    n_per_unit: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    /// Input field file.
    #[arg(long)]
    field: Option<String>,
    /// Any config key, as `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

/// Runs one command line (`argv[0]` is the program name) and returns the
/// exit status.
pub fn execute<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    let text = e.to_string();
                    eprintln!("{}", text.lines().next().unwrap_or("error: invalid usage"));
                    2
                }
            };
        }
    };
    let (cmd, common) = match cli.command {
        Sub::Solve1d(c) => (Command::Solve1d, c),
        Sub::Minimize(c) => (Command::Minimize, c),
        Sub::Decompose(c) => (Command::Decompose, c),
        Sub::Stripedist(c) => (Command::Stripedist, c),
        Sub::Classify(c) => (Command::Classify, c),
        Sub::Verify(c) => (Command::Verify, c),
        Sub::GammaCheck(c) => (Command::GammaCheck, c),
    };
    match run(cmd, common) {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            1
        }
    }
}

fn resolve(cmd: Command, c: &Common) -> Result<(Config, Vec<PathBuf>), ConfigError> {
    let mut cfg = Config::with_defaults(&cmd.defaults());
    let mut inputs = Vec::new();
    if let Some(path) = &c.config {
        if path.as_os_str() != "default" {
            cfg.load_file(path)?;
            inputs.push(path.clone());
        }
    }
    let sec = cmd.section();
    let flags = [
        ("params.d".to_string(), &c.d),
        ("params.p".to_string(), &c.p),
        ("params.tau".to_string(), &c.tau),
        ("params.eps".to_string(), &c.eps),
        ("params.L".to_string(), &c.box_len),
        ("params.n_per_unit".to_string(), &c.n_per_unit),
        (format!("{sec}.seed"), &c.seed),
        (format!("{sec}.field"), &c.field),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(&key, v)?;
        }
    }
    for a in &c.set {
        cfg.set_assignment(a)?;
    }
    Ok((cfg, inputs))
}

fn threads(flag: Option<usize>) -> Result<usize, ConfigError> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| err(THREADS_ENV, format!("expected a positive integer, got {v:?}")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(err("threads", "need at least one thread"));
    }
    Ok(n)
}

fn run(cmd: Command, c: Common) -> Result<i32, Failure> {
    let start = Instant::now();
    let (mut cfg, mut inputs) = resolve(cmd, &c)?;
    let threads = threads(c.threads)?;
    let dir = run_dir(&c.out, cmd.name())?;
    let outcome = match cmd.run(&mut cfg, &dir, threads) {
        Ok(o) => o,
        Err(e) => {
            let _ = std::fs::remove_dir_all(&dir);
            return Err(e);
        }
    };
    inputs.extend(outcome.inputs.iter().cloned());
    let hashed = |p: &Path| file_hash(p).map_err(|e| Failure::Run(format!("{}: {e}", p.display())));
    let mut input_hashes = Vec::new();
    for p in &inputs {
        input_hashes.push((p.display().to_string(), hashed(p)?));
    }
    let mut outputs = Vec::new();
    for name in &outcome.outputs {
        outputs.push((name.clone(), hashed(&dir.join(name))?));
    }
    for name in &outcome.volatile {
        outputs.push((name.clone(), "volatile".to_string()));
    }
    let status = if outcome.check_failed { "check failed" } else { "ok" };
    let m = RunManifest {
        command: cmd.name().to_string(),
        config: cfg,
        inputs: input_hashes,
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads,
        wall_seconds: start.elapsed().as_secs_f64(),
        status: status.to_string(),
        outputs,
        warnings: outcome.warnings.clone(),
    };
    std::fs::write(dir.join("manifest.txt"), m.to_text())?;
    print!("{}", outcome.summary);
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    println!("run directory: {}", dir.display());
    Ok(if outcome.check_failed { 1 } else { 0 })
}

/// `<base>/<command>-<UTC timestamp>`, suffixed `-2`, `-3`, ... if taken.
fn run_dir(base: &Path, command: &str) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(base)
        .map_err(|e| Failure::Config(err("out", format!("{}: {e}", base.display()))))?;
    let stem = format!("{command}-{}", timestamp(SystemTime::now()));
    for k in 1.. {
        let name = if k == 1 { stem.clone() } else { format!("{stem}-{k}") };
        let dir = base.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Failure::Config(err("out", format!("{}: {e}", dir.display())))),
        }
    }
    unreachable!()
}

/// `YYYYMMDDTHHMMSSZ`.
fn timestamp(t: SystemTime) -> String {
    let secs = t.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()) as i64;
    let (days, rem) = (secs.div_euclid(86_400), secs.rem_euclid(86_400));
    // days since 1970-01-01 to a civil date
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = yoe + era * 400 + i64::from(month <= 2);
    format!(
        "{year:04}{month:02}{day:02}T{:02}{:02}{:02}Z",
        rem / 3600,
        rem % 3600 / 60,
        rem % 60
    )
}
