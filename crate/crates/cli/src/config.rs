use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use suplearn::experiment::{parse_scalar, parse_scalars, preset, ExperimentConfig, Method, SystemKind};
use suplearn::RegressionMode;

fn scalar(s: &str) -> Result<f64, String> {
    parse_scalar(s).map_err(|e| e.to_string())
}

fn indices(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().with_context(|| format!("not an index: {t:?}")))
        .collect()
}

fn system(s: &str) -> Result<SystemKind, String> {
    match s {
        "dubins" => Ok(SystemKind::Dubins),
        "bicycle" => Ok(SystemKind::Bicycle),
        _ => Err(format!("unknown system {s:?} (dubins, bicycle)")),
    }
}

fn method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: suplearn::Error| e.to_string())
}

fn mode(s: &str) -> Result<RegressionMode, String> {
    match s {
        "sublinear" => Ok(RegressionMode::Sublinear),
        "convex" => Ok(RegressionMode::Convex),
        _ => Err(format!("unknown mode {s:?} (sublinear, convex)")),
    }
}

/// Experiment selection plus per-field overrides. Lists are comma
/// separated; angles accept a `deg` suffix.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// Named preset: dubins-paper, bicycle-paper, two-agent-paper.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// JSON experiment config; unspecified fields keep their defaults.
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_parser = system)]
    pub system: Option<SystemKind>,
    #[arg(long, global = true, value_parser = scalar)]
    pub speed: Option<f64>,
    #[arg(long, global = true)]
    pub x0: Option<String>,
    #[arg(long, global = true)]
    pub u_lower: Option<String>,
    #[arg(long, global = true)]
    pub u_upper: Option<String>,
    #[arg(long, global = true, value_parser = scalar)]
    pub t_final: Option<f64>,
    #[arg(long, global = true)]
    pub grid_points: Option<usize>,
    #[arg(long, global = true, value_parser = scalar)]
    pub length_scale: Option<f64>,
    #[arg(long, global = true, value_parser = scalar)]
    pub dt_sub: Option<f64>,
    #[arg(long, global = true)]
    pub n_x: Option<usize>,
    #[arg(long, global = true)]
    pub n_y: Option<usize>,
    #[arg(long, global = true, value_parser = scalar)]
    pub noise_sigma: Option<f64>,
    /// State coordinates to keep, e.g. `0,1`.
    #[arg(long, global = true)]
    pub projection: Option<String>,
    /// Regressor: qp or isnn.
    #[arg(long, global = true, value_parser = method)]
    pub method: Option<Method>,
    /// QP mode: sublinear or convex.
    #[arg(long, global = true, value_parser = mode)]
    pub mode: Option<RegressionMode>,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true, value_parser = scalar)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Hidden widths of the ISNN, e.g. `5,20,50,20,5`.
    #[arg(long, global = true)]
    pub widths: Option<String>,
    #[arg(long, global = true)]
    pub sweep_taus: Option<String>,
}

impl ConfigArgs {
    /// Resolves the base config (file, preset, or `fallback`) and applies
    /// the overrides.
    pub fn resolve(&self, fallback: &str) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => match self.system {
                Some(SystemKind::Bicycle) => preset("bicycle-paper")?,
                Some(SystemKind::Dubins) => preset("dubins-paper")?,
                None => preset(fallback)?,
            },
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = &self.$field { $target = v.clone(); })*
            };
        }
        set! {
            seed => cfg.seed,
            system => cfg.system,
            speed => cfg.speed,
            t_final => cfg.t_final,
            grid_points => cfg.grid_points,
            length_scale => cfg.length_scale,
            dt_sub => cfg.dt_sub,
            n_x => cfg.n_x,
            n_y => cfg.n_y,
            noise_sigma => cfg.noise_sigma,
            method => cfg.method,
            mode => cfg.mode,
            max_iters => cfg.qp.max_iters,
            epochs => cfg.isnn.adam.epochs,
            learning_rate => cfg.isnn.adam.learning_rate,
        }
        for (flag, target) in [
            (&self.x0, &mut cfg.agent.x0),
            (&self.u_lower, &mut cfg.agent.lower),
            (&self.u_upper, &mut cfg.agent.upper),
            (&self.sweep_taus, &mut cfg.sweep_taus),
        ] {
            if let Some(text) = flag {
                *target = parse_scalars(text)?;
            }
        }
        if let Some(p) = &self.projection {
            cfg.projection = Some(indices(p)?);
        }
        if let Some(w) = &self.widths {
            cfg.isnn.widths = indices(w)?;
        }
        if let Some(b) = self.batch_size {
            cfg.isnn.adam.batch_size = Some(b);
        }
        if self.t_final.is_some() && self.sweep_taus.is_none() {
            let n = cfg.sweep_taus.len().max(1);
            cfg.sweep_taus = suplearn::experiment::default_sweep_taus(cfg.t_final, n);
        }
        cfg.validate().context("invalid experiment config")?;
        Ok(cfg)
    }
}

/// Parses `qp,isnn`-style lists.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    Ok(s.split(',').map(|t| t.trim().parse::<Method>()).collect::<std::result::Result<Vec<_>, _>>()?)
}
