use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use anosov::billiard::{billiard_trace, BilliardState};
use anosov::experiments::{
    export_plots, geodesic_overlay, obstacles_in_square, run_and_write, run_anosov_pipeline, ExperimentConfig, ExperimentKind, PlotData,
};
use anosov::export::{to_json, write_billiard_csv, write_geodesic_csv, write_json, write_passages_jsonl};
use anosov::geodesic::{integrate, pushforward_initial, random_initial, GeodesicState, RunOptions};
use anosov::linkage::{build_table, implicit_g, validate_params, verify_assumptions, AssumptionSampling, LinkageParams, SheetId};
use anosov::rng::stream_rng;
use anosov::{Error, TorusPoint};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "anosov", version, about = "Flattened-surface geodesic flows, torus billiards and the Anosov linkage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON file with {"l", "r", "epsilon"}
    #[arg(long)]
    params: Option<PathBuf>,
    /// JSON experiment config; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated, strictly decreasing epsilon values
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    time: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct Start {
    /// Start point and heading; a random start is drawn when absent
    #[arg(long, requires_all = ["phi", "angle"])]
    theta: Option<f64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    angle: Option<f64>,
    /// Sheet signs for geodesic starts, e.g. "1,-1"
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    sheet: Option<Vec<i8>>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the linkage parameters; --full also verifies the four assumptions
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        full: bool,
    },
    /// Draw the billiard table, optionally with projected geodesics (--samples)
    TablePlot {
        #[command(flatten)]
        common: Common,
    },
    BilliardTrace {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        start: Start,
    },
    GeodesicTrace {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        start: Start,
    },
    Converge {
        #[command(flatten)]
        common: Common,
    },
    ZoneStats {
        #[command(flatten)]
        common: Common,
    },
    AnosovCert {
        #[command(flatten)]
        common: Common,
    },
    Horizon {
        #[command(flatten)]
        common: Common,
    },
    MeshExport {
        #[command(flatten)]
        common: Common,
    },
}

const EXIT_INVALID: u8 = 2;
const EXIT_CERTIFICATE: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::InvalidParams { .. } | Error::InvalidConfig(_) | Error::AssumptionFailed { .. }) => EXIT_INVALID,
        Some(Error::Io(_) | Error::Json(_) | Error::EmptyDataset) | None => 1,
        Some(_) => EXIT_NUMERICAL,
    }
}

fn load_params(common: &Common) -> Result<LinkageParams> {
    match &common.params {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(serde_json::from_str(&text).map_err(Error::from)?)
        }
        None => Ok(LinkageParams::new(2.8, 0.4, 0.02)),
    }
}

fn config(kind: ExperimentKind, common: &Common, default_eps: &[f64]) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut c: ExperimentConfig = serde_json::from_str(&text).map_err(Error::from)?;
            c.experiment = kind;
            c
        }
        None => {
            let mut c = ExperimentConfig::new(kind, load_params(common)?);
            if !default_eps.is_empty() {
                c.eps_list = default_eps.to_vec();
            }
            c
        }
    };
    if common.config.is_some() && common.params.is_some() {
        cfg.params = load_params(common)?;
    }
    if let Some(e) = &common.eps {
        cfg.eps_list = e.clone();
    }
    if cfg.eps_list.is_empty() {
        cfg.eps_list = vec![cfg.params.epsilon];
    }
    cfg.delta = common.delta.unwrap_or(cfg.delta);
    cfg.nu = common.nu.unwrap_or(cfg.nu);
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    cfg.samples = common.samples.or(cfg.samples);
    cfg.time = common.time.or(cfg.time);
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Validate { common, full } => {
            let p = load_params(&common)?;
            let validity = validate_params(&p);
            print!("{}", to_json(&validity, 0)?);
            if !validity.valid {
                eprintln!("rejected: {}", validity.violated().join(", "));
                return Ok(EXIT_INVALID);
            }
            if full {
                let rep = verify_assumptions(&p, p.epsilon, &AssumptionSampling { seed: common.seed.unwrap_or(0), ..Default::default() });
                print!("{}", to_json(&rep, common.seed.unwrap_or(0))?);
                if let Some(name) = rep.first_failure() {
                    eprintln!("assumption failed: {name}");
                    return Ok(EXIT_INVALID);
                }
            }
            Ok(0)
        }
        Command::TablePlot { common } => {
            let p = load_params(&common)?;
            p.check()?;
            let table = build_table(&p)?;
            let dir = out_dir(&common)?;
            let seed = common.seed.unwrap_or(0);
            let mut written = export_plots(&PlotData::Table(&table), &dir, seed)?;
            if let Some(n) = common.samples.filter(|n| *n > 0) {
                let paths = geodesic_overlay(&p, n, common.time.unwrap_or(10.0), seed)?;
                written.extend(export_plots(&PlotData::Trajectories { table: &table, paths: &paths }, &dir, seed)?);
            }
            println!("obstacles in [-pi, pi]^2: {}", obstacles_in_square(&table));
            report(&written);
            Ok(0)
        }
        Command::BilliardTrace { common, start } => {
            let p = load_params(&common)?;
            p.check()?;
            let table = build_table(&p)?;
            let seed = common.seed.unwrap_or(0);
            let s0 = billiard_start(&table, &start, seed)?;
            let (_, rows) = billiard_trace(&table, &s0, common.time.unwrap_or(20.0), 0.01)?;
            let path = out_dir(&common)?.join("billiard_trace.csv");
            write_billiard_csv(File::create(&path)?, seed, &rows)?;
            report(&[path]);
            Ok(0)
        }
        Command::GeodesicTrace { common, start } => {
            let p = load_params(&common)?;
            p.check()?;
            let eps = common.eps.as_ref().and_then(|e| e.first().copied()).unwrap_or(p.epsilon);
            let surf = implicit_g(&LinkageParams { epsilon: eps, ..p })?;
            let seed = common.seed.unwrap_or(0);
            let s0 = match (start.theta, start.phi, start.angle) {
                (Some(t), Some(f), Some(a)) => {
                    let sheet = start.sheet.as_ref().map(|s| SheetId::new(s[0], s[1])).unwrap_or(SheetId::new(1, 1));
                    pushforward_initial(&surf, &BilliardState::from_angle(TorusPoint::new(t, f), a), sheet)?
                }
                _ => random_initial(&surf, &mut stream_rng(seed, 0)).ok_or(Error::EmptySample)?,
            };
            let delta = common.delta.unwrap_or(0.05);
            let nu = common.nu.unwrap_or(0.5);
            let ro = RunOptions { zones: Some((delta, nu)), stride: Some(1e-3), ..Default::default() };
            let out = integrate(&surf, &s0, common.time.unwrap_or(20.0), &ro)?;
            let dir = out_dir(&common)?;
            let traj = dir.join("geodesic_trace.csv");
            write_geodesic_csv(File::create(&traj)?, seed, &out.samples)?;
            let pass = dir.join("passages.jsonl");
            write_passages_jsonl(File::create(&pass)?, seed, &out.passages)?;
            let summary = dir.join("geodesic_summary.json");
            write_json(File::create(&summary)?, seed, &GeodesicSummary::from(&s0, &out))?;
            report(&[traj, pass, summary]);
            Ok(0)
        }
        Command::Converge { common } => {
            let cfg = config(ExperimentKind::Converge, &common, &[0.2, 0.1, 0.05, 0.025])?;
            report(&run_and_write(&cfg)?);
            Ok(0)
        }
        Command::ZoneStats { common } => {
            let cfg = config(ExperimentKind::ZoneStats, &common, &[0.04, 0.02, 0.01])?;
            report(&run_and_write(&cfg)?);
            Ok(0)
        }
        Command::AnosovCert { common } => {
            let cfg = config(ExperimentKind::Anosov, &common, &[])?;
            let rep = run_anosov_pipeline(&cfg)?;
            let dir = &cfg.output_dir;
            std::fs::create_dir_all(dir)?;
            let mut written = Vec::new();
            for e in &rep.per_epsilon {
                let path = dir.join(format!("certificate_eps{}.json", e.epsilon));
                write_json(File::create(&path)?, cfg.seed, &e.certificate)?;
                written.push(path);
                let flag = if e.outside_proven_regime { " (outside proven regime)" } else { "" };
                println!(
                    "eps {}: {} min_u {:.6e} bound {:.6e} blowups {}{}",
                    e.epsilon,
                    if e.certificate.pass { "PASS" } else { "FAIL" },
                    e.certificate.min_u,
                    e.certificate.lower_bound,
                    e.certificate.blowup_count,
                    flag
                );
            }
            let path = dir.join("anosov_summary.json");
            write_json(File::create(&path)?, cfg.seed, &rep)?;
            written.push(path);
            written.extend(export_plots(&PlotData::Certificate(&rep.per_epsilon), dir, cfg.seed)?);
            report(&written);
            Ok(if rep.per_epsilon.iter().all(|e| e.certificate.pass) { 0 } else { EXIT_CERTIFICATE })
        }
        Command::Horizon { common } => {
            let cfg = config(ExperimentKind::Horizon, &common, &[])?;
            report(&run_and_write(&cfg)?);
            Ok(0)
        }
        Command::MeshExport { common } => {
            let cfg = config(ExperimentKind::Mesh, &common, &[])?;
            report(&run_and_write(&cfg)?);
            Ok(0)
        }
    }
}

fn billiard_start(table: &anosov::billiard::BilliardTable, start: &Start, seed: u64) -> Result<BilliardState> {
    if let (Some(t), Some(f), Some(a)) = (start.theta, start.phi, start.angle) {
        let s = BilliardState::from_angle(TorusPoint::new(t, f), a);
        if !table.contains(&s.q, 0.0) {
            anyhow::bail!(Error::InvalidConfig(format!("start ({t}, {f}) is outside the table")));
        }
        return Ok(s);
    }
    use rand::Rng;
    let mut rng = stream_rng(seed, 0);
    for _ in 0..10_000 {
        let q = TorusPoint::new(rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU));
        if table.indicator(&q.lift()) < -1e-3 {
            return Ok(BilliardState::from_angle(q, rng.random_range(0.0..std::f64::consts::TAU)));
        }
    }
    Err(Error::EmptySample.into())
}

#[derive(serde::Serialize)]
struct GeodesicSummary {
    start: GeodesicState,
    end: Option<GeodesicState>,
    integral_k: f64,
    lyapunov_log: f64,
    max_constraint_drift: f64,
    max_speed_drift: f64,
    passages: usize,
    blowup_at: Option<f64>,
}

impl GeodesicSummary {
    fn from(s0: &GeodesicState, out: &anosov::geodesic::RunOutput) -> Self {
        Self {
            start: *s0,
            end: out.end,
            integral_k: out.integral_k,
            lyapunov_log: out.jacobi_log,
            max_constraint_drift: out.max_constraint_drift,
            max_speed_drift: out.max_speed_drift,
            passages: out.passages.len(),
            blowup_at: out.blowup_at,
        }
    }
}
