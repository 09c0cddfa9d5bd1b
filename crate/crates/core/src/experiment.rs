//! End-to-end experiment pipeline: configuration, presets, data generation,
//! fitting, timing tables, two-agent Hausdorff sweeps and contour exports.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::dynamics::{add_noise, reach_clouds_at, Bicycle, Dubins, ReachCloud, VectorField, DEFAULT_DT_SUB};
use crate::error::{Error, Result};
use crate::geometry::{empirical_support, hausdorff_distance, DirectionSet, PointCloud, SupportFunction, SupportSamples};
use crate::io::Model;
use crate::isnn::{train_isnn, AdamConfig, IsnnArchitecture, DEFAULT_WIDTHS};
use crate::qp::{fit_support_qp, QpSolveOptions, RegressionMode};
use crate::sampling::{sample_constrained_gp_paths, GibbsOptions, GpConfig, Hyperrectangle, InputPathEnsemble};

/// Parses a real number, reading a `deg` suffix as degrees and returning
/// radians.
pub fn parse_scalar(s: &str) -> Result<f64> {
    let t = s.trim();
    let (body, deg) = match t.strip_suffix("deg") {
        Some(b) => (b.trim_end(), true),
        None => (t, false),
    };
    let v: f64 = body.parse().map_err(|_| Error::invalid(format!("not a number: {s:?}")))?;
    Ok(if deg { v.to_radians() } else { v })
}

/// Comma-separated list of [`parse_scalar`] values.
pub fn parse_scalars(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_scalar).collect()
}

fn de_scalars<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Scalar {
        Num(f64),
        Text(String),
    }
    Vec::<Scalar>::deserialize(d)?
        .into_iter()
        .map(|s| match s {
            Scalar::Num(v) => Ok(v),
            Scalar::Text(t) => parse_scalar(&t).map_err(serde::de::Error::custom),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Dubins,
    Bicycle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Qp,
    Isnn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Qp => "qp",
            Method::Isnn => "isnn",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qp" => Ok(Method::Qp),
            "isnn" => Ok(Method::Isnn),
            _ => Err(Error::invalid(format!("unknown method {s:?} (expected qp or isnn)"))),
        }
    }
}

/// Initial state and input box of one agent. Angles may be given as
/// strings with a `deg` suffix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(deserialize_with = "de_scalars")]
    pub x0: Vec<f64>,
    #[serde(deserialize_with = "de_scalars")]
    pub lower: Vec<f64>,
    #[serde(deserialize_with = "de_scalars")]
    pub upper: Vec<f64>,
}

impl AgentConfig {
    pub fn bounds(&self) -> Result<Hyperrectangle> {
        Hyperrectangle::new(self.lower.clone(), self.upper.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsnnSettings {
    pub widths: Vec<usize>,
    pub adam: AdamConfig,
}

impl Default for IsnnSettings {
    fn default() -> Self {
        IsnnSettings { widths: DEFAULT_WIDTHS.to_vec(), adam: AdamConfig::default() }
    }
}

/// Every knob of an experiment; the default is the `dubins-paper` preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    /// Dubins translational speed.
    pub speed: f64,
    pub agent: AgentConfig,
    /// Second agent for Hausdorff sweeps.
    pub agent_b: Option<AgentConfig>,
    pub t_final: f64,
    /// Number of GP grid points on `[0, t_final]`.
    pub grid_points: usize,
    pub length_scale: f64,
    pub dt_sub: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    /// State coordinates kept before computing support values.
    pub projection: Option<Vec<usize>>,
    pub method: Method,
    pub mode: RegressionMode,
    pub qp: QpSolveOptions,
    pub isnn: IsnnSettings,
    pub gibbs: GibbsOptions,
    /// Sweep times for the two-agent study.
    pub sweep_taus: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: SystemKind::Dubins,
            speed: 2.0,
            agent: AgentConfig {
                x0: vec![0.0; 3],
                lower: vec![(-30f64).to_radians()],
                upper: vec![90f64.to_radians()],
            },
            agent_b: None,
            t_final: 2.0,
            grid_points: 101,
            length_scale: 0.7,
            dt_sub: DEFAULT_DT_SUB,
            n_x: 500,
            n_y: 200,
            seed: 0,
            noise_sigma: 0.0,
            projection: None,
            method: Method::Qp,
            mode: RegressionMode::Sublinear,
            qp: QpSolveOptions::default(),
            isnn: IsnnSettings::default(),
            gibbs: GibbsOptions::default(),
            sweep_taus: default_sweep_taus(2.0, 8),
        }
    }
}

/// `n` equispaced times `t/n, 2t/n, ..., t`.
pub fn default_sweep_taus(t_final: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| t_final * i as f64 / n as f64).collect()
}

pub const PRESETS: [&str; 3] = ["dubins-paper", "bicycle-paper", "two-agent-paper"];

/// Named configuration pinning the reference experiments.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "dubins-paper" => Ok(ExperimentConfig::default()),
        "bicycle-paper" => Ok(ExperimentConfig {
            system: SystemKind::Bicycle,
            agent: AgentConfig {
                x0: vec![0.0; 4],
                lower: vec![-1.0, (-10f64).to_radians()],
                upper: vec![1.0, 10f64.to_radians()],
            },
            projection: Some(vec![0, 1]),
            ..ExperimentConfig::default()
        }),
        "two-agent-paper" => Ok(two_agent_preset()),
        _ => Err(Error::invalid(format!("unknown preset {name:?} (known: {})", PRESETS.join(", ")))),
    }
}

/// The two agents of the Hausdorff study, on the bicycle preset.
pub fn two_agent_preset() -> ExperimentConfig {
    let mut cfg = preset("bicycle-paper").expect("built-in preset");
    cfg.agent = AgentConfig {
        x0: vec![-1.0, 1.0, 10.0, 0.1],
        lower: vec![-1.0, (-10f64).to_radians()],
        upper: vec![1.0, 10f64.to_radians()],
    };
    cfg.agent_b = Some(AgentConfig {
        x0: vec![0.0, 0.0, 8.0, -0.5],
        lower: vec![-1.2, (-2f64).to_radians()],
        upper: vec![1.0, 15f64.to_radians()],
    });
    cfg.method = Method::Isnn;
    cfg
}

impl ExperimentConfig {
    /// Parses a JSON config; unspecified fields keep their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::invalid(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn field(&self) -> Result<Box<dyn VectorField + Send + Sync>> {
        Ok(match self.system {
            SystemKind::Dubins => Box::new(Dubins::new(self.speed)?),
            SystemKind::Bicycle => Box::new(Bicycle),
        })
    }

    /// Dimension of the learned set (after projection).
    pub fn set_dim(&self) -> Result<usize> {
        Ok(match &self.projection {
            Some(p) => p.len(),
            None => self.field()?.dim(),
        })
    }

    fn check_agent(&self, agent: &AgentConfig, f: &dyn VectorField, label: &str) -> Result<()> {
        if agent.x0.len() != f.dim() {
            return Err(Error::invalid(format!("{label}.x0 has {} entries, {} expects {}", agent.x0.len(), f.name(), f.dim())));
        }
        if agent.lower.len() != f.input_dim() || agent.upper.len() != f.input_dim() {
            return Err(Error::invalid(format!("{label} input bounds need {} entries", f.input_dim())));
        }
        agent.bounds().map(|_| ())
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.field()?;
        self.check_agent(&self.agent, f.as_ref(), "agent")?;
        if let Some(b) = &self.agent_b {
            self.check_agent(b, f.as_ref(), "agent_b")?;
        }
        if self.n_x == 0 || self.n_y == 0 {
            return Err(Error::invalid("n_x and n_y must be positive"));
        }
        if self.grid_points < 2 || !(self.t_final > 0.0) || !(self.length_scale > 0.0) || !(self.dt_sub > 0.0) {
            return Err(Error::invalid("need grid_points >= 2 and positive t_final, length_scale, dt_sub"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be >= 0"));
        }
        if let Some(p) = &self.projection {
            let mut seen = vec![false; f.dim()];
            for &i in p {
                if i >= f.dim() || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!("projection {p:?} is not a list of distinct coordinates below {}", f.dim())));
                }
            }
            if p.is_empty() {
                return Err(Error::invalid("projection must keep at least one coordinate"));
            }
        }
        if self.sweep_taus.iter().any(|&t| !(0.0..=self.t_final).contains(&t)) {
            return Err(Error::invalid("sweep times must lie in [0, t_final]"));
        }
        if self.sweep_taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("sweep times must be increasing"));
        }
        if self.isnn.widths.is_empty() || self.isnn.widths.contains(&0) {
            return Err(Error::invalid("ISNN widths must be nonempty and positive"));
        }
        Ok(())
    }

    pub fn gp(&self) -> Result<GpConfig> {
        GpConfig::uniform(self.length_scale, self.t_final, self.grid_points)
    }
}

/// Everything `gen-data` produces.
#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub ensemble: InputPathEnsemble,
    /// Full-state terminal cloud.
    pub reach: ReachCloud,
    /// Projected, noisy cloud from which the samples are taken.
    pub cloud: PointCloud,
    pub samples: SupportSamples,
}

/// Projects and perturbs `cloud` as configured, then takes `n_y` support
/// samples at uniformly drawn directions.
pub fn observe(cfg: &ExperimentConfig, cloud: &PointCloud, seed: u64) -> Result<(PointCloud, SupportSamples)> {
    let projected = match &cfg.projection {
        Some(p) => cloud.project(p)?,
        None => cloud.clone(),
    };
    let noisy = add_noise(&projected, cfg.noise_sigma, seed)?;
    let dirs = DirectionSet::sample_uniform(noisy.dim(), cfg.n_y, seed)?;
    let samples = empirical_support(&noisy, &dirs)?;
    Ok((noisy, samples))
}

/// Input paths, trajectories and support samples for `agent`, observed at
/// each of the sorted `times`.
pub fn generate_at(
    cfg: &ExperimentConfig,
    agent: &AgentConfig,
    seed: u64,
    times: &[f64],
) -> Result<(InputPathEnsemble, Vec<(ReachCloud, PointCloud, SupportSamples)>)> {
    let f = cfg.field()?;
    let ensemble = sample_constrained_gp_paths(&cfg.gp()?, &agent.bounds()?, cfg.n_x, seed, cfg.gibbs)?;
    let clouds = reach_clouds_at(f.as_ref(), &agent.x0, &ensemble, cfg.dt_sub, times)?;
    let observed = clouds
        .into_iter()
        .map(|rc| {
            let (cloud, samples) = observe(cfg, &rc.cloud, seed)?;
            Ok((rc, cloud, samples))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ensemble, observed))
}

/// Sampling, integration to `t_final` and support samples of the primary agent.
pub fn generate(cfg: &ExperimentConfig) -> Result<GeneratedData> {
    cfg.validate()?;
    let (ensemble, mut obs) = generate_at(cfg, &cfg.agent, cfg.seed, &[cfg.t_final])?;
    let (reach, cloud, samples) = obs.remove(0);
    Ok(GeneratedData { ensemble, reach, cloud, samples })
}

/// Fits `samples` with `method`; the ISNN is seeded with `seed`.
pub fn fit_samples(cfg: &ExperimentConfig, samples: &SupportSamples, method: Method, seed: u64) -> Result<Model> {
    match method {
        Method::Qp => Ok(Model::MaxAffine(fit_support_qp(samples, cfg.mode, &cfg.qp)?)),
        Method::Isnn => {
            let arch = IsnnArchitecture::new(samples.dim(), cfg.isnn.widths.clone())?;
            let adam = AdamConfig { seed, ..cfg.isnn.adam };
            Ok(Model::Isnn(train_isnn(samples, &arch, &adam)?))
        }
    }
}

/// One row of a computational-time table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub instance: usize,
    pub method: Method,
    pub seconds: f64,
}

/// Fits `instances` independent data sets (seeds `seed, seed + 1, ...`)
/// with every method in `methods`.
pub fn timing_table(cfg: &ExperimentConfig, instances: usize, methods: &[Method]) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::with_capacity(instances * methods.len());
    for i in 0..instances {
        let inst = ExperimentConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
        let data = generate(&inst)?;
        for &method in methods {
            let model = fit_samples(&inst, &data.samples, method, inst.seed)?;
            rows.push(TimingRow { instance: i + 1, method, seconds: model.seconds().unwrap_or(f64::NAN) });
        }
    }
    Ok(rows)
}

pub fn timing_csv_rows(rows: &[TimingRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["instance", "method", "seconds"].map(String::from).to_vec();
    let body = rows
        .iter()
        .map(|r| vec![r.instance.to_string(), r.method.name().to_string(), crate::io::fmt_f64(r.seconds)])
        .collect();
    (header, body)
}

/// One row of a Hausdorff sweep. `method` is `qp`, `isnn`, or `cloud` for
/// the distance between the raw empirical support functions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub method: String,
    pub delta_h: f64,
}

/// Hausdorff distance between the two agents' learned (projected) sets at
/// each sweep time. Agent B draws its paths, noise and directions from
/// seed `seed + 1`.
pub fn two_agent_sweep(cfg: &ExperimentConfig, methods: &[Method], grid: &DirectionSet) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let b = cfg
        .agent_b
        .as_ref()
        .ok_or_else(|| Error::invalid("the two-agent sweep needs agent_b"))?;
    if cfg.set_dim()? != grid.dim() {
        return Err(Error::DimensionMismatch { expected: cfg.set_dim()?, got: grid.dim() });
    }
    let taus = &cfg.sweep_taus;
    let (_, obs_a) = generate_at(cfg, &cfg.agent, cfg.seed, taus)?;
    let (_, obs_b) = generate_at(cfg, b, cfg.seed.wrapping_add(1), taus)?;
    let mut rows = Vec::new();
    for ((&tau, (_, cloud_a, s_a)), (_, cloud_b, s_b)) in taus.iter().zip(&obs_a).zip(&obs_b) {
        rows.push(SweepRow { tau, method: "cloud".into(), delta_h: hausdorff_distance(cloud_a, cloud_b, grid)? });
        for &m in methods {
            let fa = fit_samples(cfg, s_a, m, cfg.seed)?;
            let fb = fit_samples(cfg, s_b, m, cfg.seed.wrapping_add(1))?;
            rows.push(SweepRow { tau, method: m.name().into(), delta_h: hausdorff_distance(&fa, &fb, grid)? });
        }
    }
    Ok(rows)
}

pub fn sweep_csv_rows(rows: &[SweepRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["tau", "method", "delta_h"].map(String::from).to_vec();
    let body = rows
        .iter()
        .map(|r| vec![crate::io::fmt_f64(r.tau), r.method.clone(), crate::io::fmt_f64(r.delta_h)])
        .collect();
    (header, body)
}

/// Direction grid description: `default`, `circle:N`, `sphere:NAZxNEL`,
/// `random:N` or `random:N:SEED`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GridSpec {
    Default,
    Circle(usize),
    Sphere(usize, usize),
    Random(usize, u64),
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("bad grid spec {s:?} (expected default, circle:N, sphere:AxB or random:N[:SEED])"));
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "default" if rest.is_empty() => Ok(GridSpec::Default),
            "circle" => Ok(GridSpec::Circle(num(rest)?)),
            "sphere" => {
                let (a, b) = rest.split_once('x').ok_or_else(bad)?;
                Ok(GridSpec::Sphere(num(a)?, num(b)?))
            }
            "random" => match rest.split_once(':') {
                Some((n, seed)) => Ok(GridSpec::Random(num(n)?, seed.trim().parse().map_err(|_| bad())?)),
                None => Ok(GridSpec::Random(num(rest)?, 0)),
            },
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSpec::Default => write!(f, "default"),
            GridSpec::Circle(n) => write!(f, "circle:{n}"),
            GridSpec::Sphere(a, b) => write!(f, "sphere:{a}x{b}"),
            GridSpec::Random(n, s) => write!(f, "random:{n}:{s}"),
        }
    }
}

impl GridSpec {
    pub fn build(&self, dim: usize) -> Result<DirectionSet> {
        let check = |d: usize| {
            if d == dim {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected: dim, got: d })
            }
        };
        match *self {
            GridSpec::Default => DirectionSet::default_grid(dim),
            GridSpec::Circle(n) => check(2).and_then(|_| DirectionSet::circle(n)),
            GridSpec::Sphere(a, b) => check(3).and_then(|_| DirectionSet::sphere(a, b)),
            GridSpec::Random(n, seed) => DirectionSet::sample_uniform(dim, n, seed),
        }
    }
}

/// `(y1..yd, h)` rows.
pub fn eval_rows<H: SupportFunction + ?Sized>(h: &H, grid: &DirectionSet) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    if h.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: h.dim(), got: grid.dim() });
    }
    let mut header: Vec<String> = (1..=grid.dim()).map(|i| format!("y{i}")).collect();
    header.push("h".into());
    let rows = grid
        .iter()
        .map(|y| y.coords().iter().copied().chain([h.eval_dir(y)]).collect())
        .collect();
    Ok((header, rows))
}

fn polar_angle(y2: f64, y1: f64) -> f64 {
    let a = y2.atan2(y1);
    if a == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}

/// Plot-ready rows: `(theta, h)` for `d = 2` with `theta` in `(-pi, pi]`,
/// `(phi, theta, h)` for `d = 3` with azimuth `phi` in `(-pi, pi]` and
/// elevation `theta` in `[-pi/2, pi/2]`, raw direction columns otherwise.
pub fn contour_rows<H: SupportFunction + ?Sized>(h: &H, grid: &DirectionSet) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    if h.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: h.dim(), got: grid.dim() });
    }
    match grid.dim() {
        2 => Ok((
            vec!["theta".into(), "h".into()],
            grid.iter().map(|y| vec![polar_angle(y.coords()[1], y.coords()[0]), h.eval_dir(y)]).collect(),
        )),
        3 => Ok((
            vec!["phi".into(), "theta".into(), "h".into()],
            grid.iter()
                .map(|y| {
                    let c = y.coords();
                    let phi = if c[0] == 0.0 && c[1] == 0.0 { 0.0 } else { polar_angle(c[1], c[0]) };
                    vec![phi, c[2].clamp(-1.0, 1.0).asin(), h.eval_dir(y)]
                })
                .collect(),
        )),
        _ => eval_rows(h, grid),
    }
}
