use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backend::BackendSpec;
use crate::bench::{self, PrepTimings};
use crate::evaluate::{evaluate_dir, EvalError};
use crate::params::SessionParams;
use crate::session::{load_scene_and_views, SessionManager};
use crate::sweep::{parse_counts, run_sweep, sweep_csv};

pub const SEED_ENV: &str = "SPLATSEG_SEED";

#[derive(Debug, Parser)]
#[command(name = "splatseg", version, about = "Click-prompted instance segmentation of Gaussian-splat scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the session API over HTTP.
    Serve(ServeArgs),
    /// Score predicted masks against a dataset.
    Evaluate(EvaluateArgs),
    /// Time scene preparation or per-frame mask production.
    Bench(BenchArgs),
    /// Metrics as a function of clicks per instance.
    ClicksSweep(SweepArgs),
    /// Write a synthetic cluster dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// `baseline` or `external:<shell command>`.
    #[arg(long, default_value = "baseline")]
    pub backend: BackendSpec,
    /// Batch shuffling seed; SPLATSEG_SEED takes precedence.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for rendering and batching (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Click weight falloff, meters.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// ROI cylinder radius, meters.
    #[arg(long)]
    pub radius: Option<f64>,
    /// ROI cylinder height, meters.
    #[arg(long)]
    pub height: Option<f64>,
    /// Squared pixel radius of a primitive's footprint in masks.
    #[arg(long)]
    pub rho2: Option<f64>,
}

impl PipelineArgs {
    pub fn params(&self) -> Result<SessionParams> {
        let mut p = SessionParams::default();
        if let Some(s) = self.seed {
            p.seed = s;
        }
        if let Ok(s) = std::env::var(SEED_ENV) {
            p.seed = s.trim().parse().with_context(|| format!("{SEED_ENV}=`{s}` is not an integer"))?;
        }
        if let Some(v) = self.sigma {
            p.sigma_m = v;
        }
        if let Some(v) = self.radius {
            p.radius_m = v;
        }
        if let Some(v) = self.height {
            p.height_m = v;
        }
        if let Some(v) = self.rho2 {
            p.rho2 = v;
        }
        p.validate().map_err(anyhow::Error::msg)?;
        Ok(p)
    }

    fn init_threads(&self) -> Result<()> {
        if let Some(n) = self.threads {
            if n == 0 {
                bail!("--threads must be positive");
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the worker pool")?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Scene to open a session on at startup: a PLY file or a dataset root.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// COLMAP model directory for the startup scene.
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub dataset_root: PathBuf,
    /// Directory of `<stem>.png` masks (or an export directory).
    pub pred_dir: PathBuf,
    #[arg(long, default_value = "splatseg")]
    pub method: String,
    /// Where report.json and report.csv go (default: the prediction directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchMode {
    /// Mask render and refinement per frame.
    Render,
    /// Scene load plus one segmentation pass per instance.
    Prepare,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub mode: BenchMode,
    /// Synthetic scene sizes, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "10000,100000,1000000")]
    pub primitives: Vec<usize>,
    #[arg(long, default_value_t = bench::DEFAULT_INSTANCES)]
    pub instances: usize,
    #[arg(long, default_value_t = bench::DEFAULT_RUNS)]
    pub runs: usize,
    #[arg(long, default_value_t = bench::DEFAULT_WARMUP)]
    pub warmup: usize,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Clicks per instance, comma-separated (e.g. 5,10,15,20,25,30).
    pub counts: String,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub out_dir: PathBuf,
    #[arg(long, default_value = "Synth")]
    pub name: String,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    #[arg(long, default_value_t = 2400)]
    pub points: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Parse and run; usage errors exit with 2, failures with 1.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Serve(a) => serve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => bench_cmd(a),
        Command::ClicksSweep(a) => match parse_counts(&a.counts) {
            Ok(counts) => sweep(a, counts),
            Err(msg) => {
                eprintln!("error: {msg}\n\nUsage: splatseg clicks-sweep <COUNTS> --dataset <DATASET>");
                return ExitCode::from(2);
            }
        },
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    a.pipeline.init_threads()?;
    let params = a.pipeline.params()?;
    let manager = Arc::new(SessionManager::new(params.clone(), a.pipeline.backend.clone()));
    if let Some(scene) = &a.scene {
        let (scene, views) = load_scene_and_views(scene, a.cameras.as_deref())?;
        let id = manager.insert(scene, views, params, a.pipeline.backend.clone())?;
        println!("session {id}");
    } else if a.cameras.is_some() {
        bail!("--cameras needs --scene");
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("binding {}:{}", a.host, a.port))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, crate::api::router(manager))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let out_dir = a.out.clone().unwrap_or_else(|| a.pred_dir.clone());
    match evaluate_dir(&a.dataset_root, &a.pred_dir, &a.method, &out_dir) {
        Ok(out) => {
            print!("{}", splatseg_core::metrics::MetricReport::to_csv(std::slice::from_ref(&out.report)));
            eprintln!("wrote {} and {}", out.json_path.display(), out.csv_path.display());
            Ok(())
        }
        Err(EvalError::MissingViews(views)) => {
            for v in &views {
                eprintln!("missing: {v}");
            }
            bail!("predictions missing for {} view(s)", views.len())
        }
        Err(e) => Err(e.into()),
    }
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    a.pipeline.init_threads()?;
    let params = a.pipeline.params()?;
    if a.instances == 0 || a.primitives.iter().any(|&n| n < a.instances) {
        bail!("need at least one primitive per instance");
    }
    match a.mode {
        BenchMode::Render => {
            let rows: Vec<_> = a
                .primitives
                .iter()
                .map(|&n| bench::bench_render(n, a.instances, &params, a.warmup, a.runs))
                .collect();
            print!("{}", bench::render_table(&rows));
        }
        BenchMode::Prepare => {
            let backend = a.pipeline.backend.build(params.growth_radius_m).map_err(anyhow::Error::msg)?;
            let views = splatseg_core::synth::default_cameras();
            let dir = tempfile::tempdir()?;
            let mut rows = Vec::new();
            for &n in &a.primitives {
                let synth = bench::bench_scene(n, a.instances);
                let ply = dir.path().join(format!("bench_{n}.ply"));
                splatseg_core::scene::save_labeled_ply(&synth.scene, &ply)?;
                let clicks = bench::center_clicks(&synth, &views);
                let mut failure = None;
                let prep = bench::time_runs(a.warmup, a.runs, || {
                    if let Err(e) = bench::prepare(&ply, &views, &clicks, backend.as_ref(), &params) {
                        failure.get_or_insert(e);
                    }
                });
                if let Some(e) = failure {
                    return Err(e.into());
                }
                rows.push(PrepTimings {
                    primitives: synth.scene.len(),
                    threads: rayon::current_num_threads(),
                    instances: clicks.len(),
                    prep,
                });
            }
            print!("{}", bench::prep_table(&rows));
        }
    }
    Ok(())
}

fn sweep(a: SweepArgs, counts: Vec<usize>) -> Result<()> {
    a.pipeline.init_threads()?;
    let params = a.pipeline.params()?;
    let rows = run_sweep(&a.dataset, &counts, &params, &a.pipeline.backend, params.seed)?;
    let csv = sweep_csv(&rows);
    for r in rows.iter().filter(|r| r.dropped > 0) {
        eprintln!("{} clicks: dropped {} empty-space click(s)", r.clicks, r.dropped);
    }
    match &a.out {
        Some(p) => std::fs::write(p, csv).with_context(|| p.display().to_string())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    use splatseg_core::synth::{cluster_scene, default_cameras, write_dataset, ClusterParams};
    if a.clusters == 0 || a.points == 0 {
        bail!("--clusters and --points must be positive");
    }
    let s = cluster_scene(&ClusterParams {
        clusters: a.clusters,
        points_per_cluster: a.points,
        seed: a.seed,
        ..ClusterParams::default()
    });
    write_dataset(
        &a.out_dir,
        &a.name,
        &s.labeled(),
        &default_cameras(),
        splatseg_core::projection::DEFAULT_RHO2_THRESHOLD,
    )?;
    eprintln!("wrote {} primitives and {} views to {}", s.scene.len(), 8, a.out_dir.display());
    Ok(())
}
