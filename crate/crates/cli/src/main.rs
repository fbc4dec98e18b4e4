//! `tfapprox`: builds approximating networks, checks core oracles, tabulates
//! capacity bounds and runs regression sweeps from JSON configs.
//!
//! Exit status is 0 when every asserted bound holds, 2 when a bound is
//! violated and 1 on configuration or runtime errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use transformer_approx::capacity::{covering_bound, covering_envelope, envelope, op_counts, vc_bound};
use transformer_approx::certificate::{ApproxCertificate, MeasureConfig};
use transformer_approx::grid::{
    assemble_holder_lp, assemble_sobolev_lp, assemble_sup_norm, default_lp_delta, default_sup_delta,
};
use transformer_approx::kst::{assemble_kst, OmegaK};
use transformer_approx::metrics::write_estimates_csv;
use transformer_approx::mixing::{run_sweep, write_reports_csv, write_summary_csv, SweepConfig};
use transformer_approx::nn::ArchSpec;
use transformer_approx::target::TargetSpec;
use transformer_approx::verify::{verify_core, VerifyConfig};

#[derive(Parser)]
#[command(name = "tfapprox", version, about = "Constructive Transformer approximation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's seed; for `regress` it offsets every listed seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sampling and sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Piecewise-constant network with an L^p certificate.
    ApproxHolder,
    /// Middle-of-three-copies network with a sup-norm certificate.
    ApproxSup,
    /// Cell-average network for Sobolev targets.
    ApproxSobolev,
    /// Cantor-coded superposition network.
    ApproxKst,
    /// Oracle equivalence checks for the building blocks.
    VerifyCore,
    /// Parameter, operation and VC/covering bounds per architecture.
    Capacity,
    /// Regression sweep on mixing sequences.
    Regress,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::ApproxHolder => "approx-holder",
            Command::ApproxSup => "approx-sup",
            Command::ApproxSobolev => "approx-sobolev",
            Command::ApproxKst => "approx-kst",
            Command::VerifyCore => "verify-core",
            Command::Capacity => "capacity",
            Command::Regress => "regress",
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ApproxConfig {
    target: TargetSpec,
    d_x: usize,
    n: usize,
    k: usize,
    /// Trifling width `δ` (grid builders) or Ω_K margin (superposition builder).
    #[serde(default)]
    delta: Option<f64>,
    /// Midpoint-rule points per axis for cell averages.
    #[serde(default = "default_quadrature")]
    quadrature: usize,
    /// Sobolev constant `C` in the bound `C·K_W·(d_x n)^{…}/K`.
    #[serde(default)]
    constant: Option<f64>,
    #[serde(default)]
    measure: MeasureConfig,
}

fn default_quadrature() -> usize {
    4
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct CapacityConfig {
    specs: Vec<ArchSpec>,
    /// Covering scale `δ`.
    delta: f64,
    /// Sample size.
    m: u64,
    /// Output bound `B`.
    bound: f64,
}

#[derive(Serialize)]
struct CapacityRow {
    d_x: usize,
    d_y: usize,
    n: usize,
    dim: usize,
    heads: usize,
    head_size: usize,
    width: usize,
    depth: usize,
    d: u64,
    t: u64,
    q: u64,
    vc_bound: f64,
    covering_bound: f64,
    envelope_d: f64,
    envelope_t: f64,
    envelope_q: f64,
    covering_envelope: f64,
}

/// Wrapper written around every JSON report.
#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    config_sha256: &'a str,
    seeds: Vec<u64>,
    result: T,
}

struct Output<'a> {
    command: Command,
    out: &'a Path,
    hash: String,
}

impl Output<'_> {
    fn write_json<T: Serialize>(&self, file: &str, seeds: Vec<u64>, result: T) -> Result<()> {
        let report = Report { command: self.command.name(), config_sha256: &self.hash, seeds, result };
        let path = self.out.join(file);
        fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// Parsed config and the SHA-256 of its bytes.
fn read_config<T: DeserializeOwned>(path: &Path) -> Result<(T, String)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let cfg = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    Ok((cfg, hex(&Sha256::digest(text.as_bytes()))))
}

fn read_required<T: DeserializeOwned>(path: Option<&Path>, command: Command) -> Result<(T, String)> {
    match path {
        Some(p) => read_config(p),
        None => bail!("{} needs --config <path>", command.name()),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn run_approx(cli: &Cli, cmd: Command) -> Result<bool> {
    let (mut cfg, hash) = read_required::<ApproxConfig>(cli.config.as_deref(), cmd)?;
    if let Some(seed) = cli.seed {
        cfg.measure.seed = seed;
    }
    let target = cfg.target.build(cfg.d_x, cfg.n)?;
    let cert: ApproxCertificate = match cmd {
        Command::ApproxHolder => {
            let gamma = target.holder()?.gamma;
            let delta = cfg.delta.unwrap_or_else(|| default_lp_delta(cfg.k, cfg.measure.p, gamma));
            assemble_holder_lp(&target, cfg.k, delta, &cfg.measure)?
        }
        Command::ApproxSup => {
            let delta = cfg.delta.unwrap_or_else(|| default_sup_delta(cfg.k));
            assemble_sup_norm(&target, cfg.k, delta, &cfg.measure)?
        }
        Command::ApproxSobolev => {
            let p = target.sobolev()?.p;
            let delta = cfg.delta.unwrap_or_else(|| default_lp_delta(cfg.k, p.max(cfg.measure.p), 1.0));
            assemble_sobolev_lp(&target, cfg.k, delta, cfg.quadrature, cfg.constant, &cfg.measure)?
        }
        Command::ApproxKst => {
            let margin = cfg.delta.unwrap_or_else(|| OmegaK::default_margin(cfg.k));
            assemble_kst(&target, cfg.k, margin, &cfg.measure)?
        }
        _ => unreachable!("approximation commands only"),
    };
    let ctx = Output { command: cmd, out: &cli.out, hash };
    ctx.write_json("certificate.json", cert.seeds.clone(), &cert)?;
    let estimates: Vec<_> = cert.measured_sup.iter().chain(cert.measured_lp.iter()).cloned().collect();
    write_estimates_csv(fs::File::create(cli.out.join("errors.csv"))?, &estimates)?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4e}"));
    println!(
        "{} target={} K={} sup={} (bound {}) lp={} (bound {}) pass={}",
        cmd.name(),
        cert.target,
        cfg.k,
        fmt(cert.measured_sup.as_ref().map(|e| e.value)),
        fmt(cert.theoretical_bound),
        fmt(cert.measured_lp.as_ref().map(|e| e.value)),
        fmt(cert.lp_bound),
        cert.pass
    );
    Ok(cert.pass)
}

fn run_verify(cli: &Cli) -> Result<bool> {
    let (mut cfg, hash) = match cli.config.as_deref() {
        Some(p) => read_config::<VerifyConfig>(p)?,
        None => (VerifyConfig::default(), hex(&Sha256::digest(b""))),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let checks = verify_core(&cfg)?;
    let mut w = csv::Writer::from_path(cli.out.join("checks.csv"))?;
    for c in &checks {
        w.serialize(c)?;
        println!("verify-core {} cases={} max_error={:.3e} pass={}", c.name, c.cases, c.max_error, c.pass);
    }
    w.flush()?;
    let pass = checks.iter().all(|c| c.pass);
    Output { command: Command::VerifyCore, out: &cli.out, hash }.write_json("checks.json", vec![cfg.seed], &checks)?;
    Ok(pass)
}

fn run_capacity(cli: &Cli) -> Result<bool> {
    let (cfg, hash) = read_required::<CapacityConfig>(cli.config.as_deref(), Command::Capacity)?;
    if cfg.specs.is_empty() {
        bail!("capacity config lists no specs");
    }
    let mut rows = Vec::with_capacity(cfg.specs.len());
    for s in &cfg.specs {
        s.validate()?;
        let c = op_counts(s);
        let e = envelope(s);
        rows.push(CapacityRow {
            d_x: s.d_x,
            d_y: s.d_y,
            n: s.n,
            dim: s.dim,
            heads: s.heads,
            head_size: s.head_size,
            width: s.width,
            depth: s.depth,
            d: c.d,
            t: c.t,
            q: c.q,
            vc_bound: vc_bound(&c)?,
            covering_bound: covering_bound(s, cfg.delta, cfg.m, cfg.bound)?,
            envelope_d: e.d,
            envelope_t: e.t,
            envelope_q: e.q,
            covering_envelope: covering_envelope(s, cfg.delta, cfg.m, cfg.bound),
        });
    }
    let mut w = csv::Writer::from_path(cli.out.join("capacity.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    println!("capacity specs={} max_vc={:.4e}", rows.len(), rows.iter().map(|r| r.vc_bound).fold(0.0, f64::max));
    Output { command: Command::Capacity, out: &cli.out, hash }.write_json("capacity.json", vec![], &rows)?;
    Ok(true)
}

fn run_regress(cli: &Cli) -> Result<bool> {
    let (mut cfg, hash) = read_required::<SweepConfig>(cli.config.as_deref(), Command::Regress)?;
    if let Some(offset) = cli.seed {
        cfg.seeds.iter_mut().for_each(|s| *s = s.wrapping_add(offset));
    }
    let outcome = run_sweep(&cfg)?;
    write_reports_csv(&cli.out.join("runs.csv"), &outcome.reports)?;
    write_summary_csv(&cli.out.join("summary.csv"), &outcome.summaries)?;
    for s in &outcome.summaries {
        println!(
            "regress process={} slope={:.3}±{:.3} predicted={:.3} r2={:.3}",
            s.process, s.fit.slope, s.fit.slope_std_error, s.predicted_exponent, s.fit.r2
        );
    }
    Output { command: Command::Regress, out: &cli.out, hash }.write_json("report.json", cfg.seeds.clone(), &outcome)?;
    Ok(true)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(k) = cli.threads {
        if k == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().context("configuring thread pool")?;
    }
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match cli.command {
        c @ (Command::ApproxHolder | Command::ApproxSup | Command::ApproxSobolev | Command::ApproxKst) => {
            run_approx(cli, c)
        }
        Command::VerifyCore => run_verify(cli),
        Command::Capacity => run_capacity(cli),
        Command::Regress => run_regress(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: bound violated", cli.command.name());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
