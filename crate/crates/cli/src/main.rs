//! `suplearn`: data generation, fitting, evaluation, Hausdorff studies and
//! contour exports for support-function regression.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};
use serde_json::json;
use suplearn::experiment::{
    contour_rows, eval_rows, fit_samples, generate, observe, sweep_csv_rows, timing_csv_rows, timing_table,
    two_agent_sweep, ExperimentConfig, GridSpec, Method,
};
use suplearn::io::{
    load_directions, load_point_cloud, load_samples, save_ensemble, save_point_cloud, save_reach_cloud,
    save_samples, write_csv, write_csv_rows, write_json,
};
use suplearn::{hausdorff_distance, load_model, save_model, DirectionSet, Model, Provenance, SupportFunction};

use config::{parse_methods, ConfigArgs};

#[derive(Parser, Debug)]
#[command(name = "suplearn", version, about = "Reach-set estimation by sublinear regression of support functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output file, or directory for `gen-data`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Log level is `info` by default; `-q` keeps warnings only.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample input paths, integrate them, and take support samples.
    GenData {
        /// Take support samples of this point cloud instead of simulating.
        #[arg(long)]
        cloud: Option<PathBuf>,
    },
    /// Fit a regressor, or build a timing table with `--instances`.
    Fit {
        /// Support samples (CSV or JSON); generated from the config if absent.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Fit this many independent data sets and write a timing CSV.
        #[arg(long)]
        instances: Option<usize>,
        /// Methods for the timing table.
        #[arg(long, default_value = "qp,isnn")]
        methods: String,
    },
    /// Evaluate a model on a direction file or grid.
    Eval {
        model: PathBuf,
        #[arg(long, conflicts_with = "grid")]
        directions: Option<PathBuf>,
        /// default, circle:N, sphere:AxB, random:N[:SEED].
        #[arg(long)]
        grid: Option<GridSpec>,
    },
    /// Hausdorff distance between two models, or the two-agent sweep.
    Hausdorff {
        #[arg(num_args = 0..=2)]
        models: Vec<PathBuf>,
        #[arg(long, default_value = "default")]
        grid: GridSpec,
        /// Run the two-agent time sweep instead of comparing two files.
        #[arg(long)]
        sweep: bool,
        /// Regressors for the sweep; the config's method by default.
        #[arg(long)]
        methods: Option<String>,
    },
    /// Plot-ready `(theta, h)` or `(phi, theta, h)` CSV.
    ExportContour {
        model: PathBuf,
        #[arg(long, default_value = "default")]
        grid: GridSpec,
    },
    /// Computational-time table over independent sampling instances
    /// (ISNN at 30 epochs unless `--epochs` is given).
    Bench {
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value = "qp,isnn")]
        methods: String,
    },
}

/// ISNN epochs in the reference timing table.
const BENCH_EPOCHS: usize = 30;

fn out_or(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn provenance(cmd: &str, cfg: &ExperimentConfig) -> Provenance {
    Provenance::new(format!("suplearn {cmd} {}", env!("CARGO_PKG_VERSION")), Some(cfg.seed)).with("config", cfg)
}

fn grid_for(spec: Option<&GridSpec>, directions: Option<&Path>, dim: usize) -> Result<DirectionSet> {
    let grid = match directions {
        Some(path) => load_directions(path)?,
        None => spec.cloned().unwrap_or(GridSpec::Default).build(dim)?,
    };
    if grid.dim() != dim {
        bail!("directions have dimension {}, model has {dim}", grid.dim());
    }
    Ok(grid)
}

fn gen_data(cli: &Cli, cloud: Option<&Path>) -> Result<()> {
    let cfg = cli.cfg.resolve("dubins-paper")?;
    info!("seed {}", cfg.seed);
    let dir = out_or(cli, "data");
    let prov = provenance("gen-data", &cfg);
    let samples = match cloud {
        Some(path) => {
            let points = load_point_cloud(path).with_context(|| format!("loading {}", path.display()))?;
            let (observed, samples) = observe(&cfg, &points, cfg.seed)?;
            save_point_cloud(&dir.join("cloud.csv"), &observed, &prov)?;
            samples
        }
        None => {
            let data = generate(&cfg)?;
            let body = save_ensemble(&dir.join("ensemble.json"), &data.ensemble, &prov)?;
            save_reach_cloud(&dir.join("reach_cloud.json"), &data.reach, &prov)?;
            save_point_cloud(&dir.join("cloud.csv"), &data.cloud, &prov)?;
            info!("{} paths -> {}", data.ensemble.len(), body.display());
            data.samples
        }
    };
    save_samples(&dir.join("samples.json"), &samples, &prov)?;
    save_samples(&dir.join("samples.csv"), &samples, &prov)?;
    write_json(&dir.join("config.json"), &cfg)?;
    println!("{} support samples in R^{} -> {}", samples.len(), samples.dim(), dir.display());
    Ok(())
}

fn write_timing(cli: &Cli, cfg: &ExperimentConfig, instances: usize, methods: &[Method]) -> Result<()> {
    if instances == 0 {
        bail!("--instances must be positive");
    }
    info!("seed {} ({instances} instances)", cfg.seed);
    let rows = timing_table(cfg, instances, methods)?;
    let out = out_or(cli, "timing.csv");
    let (header, body) = timing_csv_rows(&rows);
    write_csv_rows(&out, &header, body)?;
    let mean = |m: Method| {
        let s: Vec<f64> = rows.iter().filter(|r| r.method == m).map(|r| r.seconds).collect();
        s.iter().sum::<f64>() / s.len() as f64
    };
    for &m in methods {
        println!("{}: mean {:.4} s over {instances} instances", m.name(), mean(m));
    }
    if methods.contains(&Method::Qp) && methods.contains(&Method::Isnn) {
        println!("qp/isnn time ratio: {:.2}", mean(Method::Qp) / mean(Method::Isnn));
    }
    println!("timing table -> {}", out.display());
    Ok(())
}

fn fit(cli: &Cli, samples: Option<&Path>, instances: Option<usize>, methods: &str) -> Result<()> {
    let cfg = cli.cfg.resolve("dubins-paper")?;
    if let Some(k) = instances {
        return write_timing(cli, &cfg, k, &parse_methods(methods)?);
    }
    info!("seed {}", cfg.seed);
    let samples = match samples {
        Some(path) => load_samples(path).with_context(|| format!("loading {}", path.display()))?,
        None => generate(&cfg)?.samples,
    };
    let model = fit_samples(&cfg, &samples, cfg.method, cfg.seed)?;
    if let Model::MaxAffine(m) = &model {
        if let Some(d) = m.diagnostics.as_ref().filter(|d| !d.converged) {
            warn!("QP stopped at the iteration limit; violation {:e}, dual residual {:e}", d.max_violation, d.dual_residual);
        }
    }
    let out = out_or(cli, "model.json");
    save_model(&out, &model, &provenance("fit", &cfg).with("n_y", samples.len()))?;
    println!("{} fit in {:.4} s -> {}", model.kind(), model.seconds().unwrap_or(f64::NAN), out.display());
    Ok(())
}

fn eval(cli: &Cli, model: &Path, directions: Option<&Path>, grid: Option<&GridSpec>) -> Result<()> {
    let m = load_model(model)?;
    let grid = grid_for(grid, directions, m.dim())?;
    let (header, rows) = eval_rows(&m, &grid)?;
    let out = out_or(cli, "eval.csv");
    write_csv(&out, &header, &rows)?;
    println!("{} rows -> {}", rows.len(), out.display());
    Ok(())
}

fn hausdorff(cli: &Cli, models: &[PathBuf], grid: &GridSpec, sweep: bool, methods: Option<&str>) -> Result<()> {
    if sweep {
        if !models.is_empty() {
            bail!("--sweep takes no model files");
        }
        let cfg = cli.cfg.resolve("two-agent-paper")?;
        info!("seed {} (agent B uses {})", cfg.seed, cfg.seed.wrapping_add(1));
        let methods = match methods {
            Some(s) => parse_methods(s)?,
            None => vec![cfg.method],
        };
        let dirs = grid.build(cfg.set_dim()?)?;
        let rows = two_agent_sweep(&cfg, &methods, &dirs)?;
        for r in &rows {
            println!("tau {:.4} {:>5} delta_H {:.6}", r.tau, r.method, r.delta_h);
        }
        let out = out_or(cli, "hausdorff.csv");
        let (header, body) = sweep_csv_rows(&rows);
        write_csv_rows(&out, &header, body)?;
        println!("sweep -> {}", out.display());
        return Ok(());
    }
    let [a, b] = models else {
        bail!("expected two model files (or --sweep)");
    };
    let (ma, mb) = (load_model(a)?, load_model(b)?);
    if ma.dim() != mb.dim() {
        bail!(suplearn::Error::DimensionMismatch { expected: ma.dim(), got: mb.dim() });
    }
    let dirs = grid.build(ma.dim())?;
    let d = hausdorff_distance(&ma, &mb, &dirs)?;
    println!("{d:?}");
    if let Some(out) = &cli.out {
        let v = json!({
            "delta_h": d,
            "grid": grid.to_string(),
            "grid_size": dirs.len(),
            "model_a": a,
            "model_b": b,
        });
        write_json(out, &v)?;
    }
    Ok(())
}

fn export_contour(cli: &Cli, model: &Path, grid: &GridSpec) -> Result<()> {
    let m = load_model(model)?;
    if m.dim() > 3 {
        warn!("dimension {} has no angular chart; writing raw direction columns", m.dim());
    }
    let dirs = grid.build(m.dim())?;
    let (header, rows) = contour_rows(&m, &dirs)?;
    let out = out_or(cli, "contour.csv");
    write_csv(&out, &header, &rows)?;
    println!("{} rows ({}) -> {}", rows.len(), header.join(","), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData { cloud } => gen_data(cli, cloud.as_deref()),
        Command::Fit { samples, instances, methods } => fit(cli, samples.as_deref(), *instances, methods),
        Command::Eval { model, directions, grid } => eval(cli, model, directions.as_deref(), grid.as_ref()),
        Command::Hausdorff { models, grid, sweep, methods } => hausdorff(cli, models, grid, *sweep, methods.as_deref()),
        Command::ExportContour { model, grid } => export_contour(cli, model, grid),
        Command::Bench { instances, methods } => {
            let mut cfg = cli.cfg.resolve("dubins-paper")?;
            if cli.cfg.epochs.is_none() {
                cfg.isnn.adam.epochs = BENCH_EPOCHS;
            }
            write_timing(cli, &cfg, *instances, &parse_methods(methods)?)
        }
    }
}

/// 2 for numerical failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|e| e.downcast_ref::<suplearn::Error>().is_some_and(suplearn::Error::is_numerical));
    if numerical { 2 } else { 1 }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
