//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails that is not a documented impossibility.
//!
//! Run with `cargo test -p suplearn-core --test acceptance`.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use suplearn::dynamics::{integrate_path, FnField, DEFAULT_DT_SUB};
use suplearn::experiment::{
    fit_samples, generate, generate_at, preset, sweep_csv_rows, timing_csv_rows, two_agent_preset, two_agent_sweep,
    ExperimentConfig, Method, TimingRow,
};
use suplearn::io::write_csv_rows;
use suplearn::sampling::{sample_truncated_mvn_gibbs, InputPath};
use suplearn::{
    empirical_support, fit_support_qp, hausdorff_distance, sample_constrained_gp_paths, Bicycle, DirectionSet, Dubins,
    IsnnArchitecture, IsnnParams, Model, QpSolveOptions, RegressionMode, SupportFunction, SupportSamples,
};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    /// Why a failure is expected: no implementation can meet the bound.
    impossible: Option<String>,
}

impl Outcome {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        Outcome { name, pass, detail, impossible: None }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn within(t: Duration, secs: u64) -> bool {
    t <= Duration::from_secs(secs)
}

fn out_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * normal(rng)).collect()
}

/// Random architecture with Gaussian passthrough weights and nonnegative
/// feedforward weights of random magnitude.
fn random_params(rng: &mut ChaCha8Rng) -> IsnnParams {
    let d = rng.random_range(1..=4);
    let depth = rng.random_range(1..=5);
    let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=12)).collect();
    let arch = IsnnArchitecture::new(d, widths).unwrap();
    let mut p = IsnnParams::zeros(&arch);
    let spread = 10f64.powf(rng.random_range(-1.0..1.0));
    for m in &mut p.w_y {
        m.as_mut_slice().iter_mut().for_each(|w| *w = spread * normal(rng));
    }
    for m in &mut p.w_z {
        m.as_mut_slice().iter_mut().for_each(|w| *w = spread * normal(rng).abs());
    }
    assert!(p.is_nonneg());
    p
}

fn isnn_sublinearity() -> Outcome {
    let (worst, t) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (mut hom, mut sub, mut cvx) = (0f64, 0f64, 0f64);
        for _ in 0..100 {
            let p = random_params(&mut rng);
            let d = p.input_dim();
            let f = |v: &[f64]| p.forward(v).unwrap();
            for _ in 0..100 {
                let scale = 10f64.powf(rng.random_range(-2.0..2.0));
                let y = random_vec(&mut rng, d, scale);
                let z = random_vec(&mut rng, d, scale);
                let a = 10.0 * (1.0 - rng.random::<f64>());
                let (fy, fz) = (f(&y), f(&z));

                let ay: Vec<f64> = y.iter().map(|v| a * v).collect();
                hom = hom.max((f(&ay) - a * fy).abs() / (1e-9 * (1.0 + (a * fy).abs())));

                let tol = 1e-9 * (1.0 + fy.abs() + fz.abs());
                let sum: Vec<f64> = y.iter().zip(&z).map(|(u, v)| u + v).collect();
                sub = sub.max((f(&sum) - fy - fz) / tol);

                let lam: f64 = rng.random();
                let mix: Vec<f64> = y.iter().zip(&z).map(|(u, v)| lam * u + (1.0 - lam) * v).collect();
                cvx = cvx.max((f(&mix) - lam * fy - (1.0 - lam) * fz) / tol);
            }
        }
        (hom, sub, cvx)
    });
    let (hom, sub, cvx) = worst;
    Outcome::new(
        "ISNN sublinearity: homogeneity, subadditivity, segment convexity on 100x100 draws",
        hom <= 1.0 && sub <= 1.0 && cvx <= 1.0 && within(t, 10),
        format!("worst violation / tolerance: hom {hom:.2e}, sub {sub:.2e}, cvx {cvx:.2e}; {:.2} s (limit 10 s)", t.as_secs_f64()),
    )
}

fn grid_error(model: &impl SupportFunction, truth: impl Fn(&[f64]) -> f64, grid: &DirectionSet) -> f64 {
    grid.iter()
        .map(|y| (model.eval_dir(y) - truth(y.coords())).abs())
        .fold(0.0, f64::max)
}

fn qp_oracles() -> Vec<Outcome> {
    let ((square, disk), t) = timed(|| {
        let dirs = DirectionSet::circle(32).unwrap();
        let grid = DirectionSet::circle(720).unwrap();
        let fit = |h: &dyn Fn(&[f64]) -> f64| {
            let values = dirs.iter().map(|y| h(y.coords())).collect();
            let s = SupportSamples::new(dirs.clone(), values).unwrap();
            let m = fit_support_qp(&s, RegressionMode::Sublinear, &QpSolveOptions::default()).unwrap();
            let obj = m.diagnostics.as_ref().unwrap().objective;
            (obj, grid_error(&m, h, &grid))
        };
        (fit(&|y| y[0].abs() + y[1].abs()), fit(&|_| 1.0))
    });
    let slow = !within(t, 30);
    let secs = t.as_secs_f64();
    // Any 32-piece sublinear max-affine model is the support function of a
    // polygon with at most 32 vertices; if it sits in the annulus
    // (1 - e) B <= K <= (1 + e) B then (1 - e) / (1 + e) <= cos(pi / 32).
    let floor = (PI / 64.0).tan().powi(2);
    // Interpolating fits lie below the circumscribed 32-gon.
    let ceiling = 1.0 / (PI / 32.0).cos() - 1.0;
    vec![
        Outcome::new(
            "QP oracle, unit square (32 directions): objective <= 1e-8, sup error <= 1e-3",
            square.0 <= 1e-8 && square.1 <= 1e-3 && !slow,
            format!("objective {:.2e}, sup error {:.2e}; {secs:.2} s for both fits (limit 30 s)", square.0, square.1),
        ),
        Outcome::new(
            "QP oracle, unit disk (32 directions): objective <= 1e-8",
            disk.0 <= 1e-8 && !slow,
            format!("objective {:.2e}", disk.0),
        ),
        Outcome {
            name: "QP oracle, unit disk (32 directions): sup error <= 1e-3",
            pass: disk.1 <= 1e-3,
            detail: format!("sup error {:.3e}", disk.1),
            impossible: Some(format!(
                "every model with 32 linear pieces has sup error >= tan^2(pi/64) = {floor:.3e} against the disk"
            )),
        },
        Outcome::new(
            "QP oracle, unit disk: error lies in the attainable band [tan^2(pi/64), sec(pi/32) - 1]",
            (floor..=ceiling).contains(&disk.1),
            format!("{floor:.3e} <= {:.3e} <= {ceiling:.3e}", disk.1),
        ),
    ]
}

fn qp_convergence_trend() -> Outcome {
    let (errors, t) = timed(|| {
        let all = DirectionSet::sample_uniform(2, 200, 11).unwrap();
        let grid = DirectionSet::circle(720).unwrap();
        [25, 50, 100, 200]
            .iter()
            .map(|&n| {
                let dirs = DirectionSet::new(all.iter().take(n).cloned().collect()).unwrap();
                let s = SupportSamples::new(dirs, vec![1.0; n]).unwrap();
                let m = fit_support_qp(&s, RegressionMode::Sublinear, &QpSolveOptions::default()).unwrap();
                (n, grid_error(&m, |_| 1.0, &grid))
            })
            .collect::<Vec<_>>()
    });
    let trend = errors.windows(2).all(|w| w[1].1 <= 1.1 * w[0].1);
    let listing: Vec<String> = errors.iter().map(|(n, e)| format!("n_y={n}: {e:.3e}")).collect();
    Outcome::new(
        "QP convergence on the unit disk: sup error nonincreasing over n_y = 25, 50, 100, 200 (10% jitter)",
        trend && within(t, 120),
        format!("{}; {:.1} s (limit 120 s)", listing.join(", "), t.as_secs_f64()),
    )
}

fn isnn_gradient_check() -> Outcome {
    let arch = IsnnArchitecture::new(2, vec![3, 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut worst, mut draws, mut skipped) = (0f64, 0, 0);
    while draws < 20 {
        let mut p = IsnnParams::zeros(&arch);
        for m in &mut p.w_y {
            m.as_mut_slice().iter_mut().for_each(|w| *w = normal(&mut rng));
        }
        for m in &mut p.w_z {
            m.as_mut_slice().iter_mut().for_each(|w| *w = normal(&mut rng).abs());
        }
        let ys: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 2, 1.0)).collect();
        let targets: Vec<f64> = (0..3).map(|_| normal(&mut rng)).collect();
        if ys.iter().any(|y| p.kink_margin(y) < 1e-3) {
            skipped += 1;
            continue;
        }
        let batch: Vec<(&[f64], f64)> = ys.iter().map(|y| y.as_slice()).zip(targets.iter().copied()).collect();
        let (grad, _) = p.backward(&batch).unwrap();
        let base = p.flatten();
        let mse = |v: &[f64]| {
            let mut q = p.clone();
            q.assign(v);
            batch.iter().map(|(y, h)| (q.forward(y).unwrap() - h).powi(2)).sum::<f64>() / batch.len() as f64
        };
        // Between kinks the MSE is quadratic in each single weight, so the
        // central difference is exact up to roundoff; a 1e-5 step moves no
        // pre-activation across the 1e-3 kink margin for unit-scale inputs.
        let step = 1e-5;
        for (i, g) in grad.flatten().iter().enumerate() {
            let (mut plus, mut minus) = (base.clone(), base.clone());
            plus[i] += step;
            minus[i] -= step;
            let fd = (mse(&plus) - mse(&minus)) / (2.0 * step);
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-4));
        }
        draws += 1;
    }
    Outcome::new(
        "ISNN backprop vs central differences, d=2, widths (3,3): max relative error <= 1e-5",
        worst <= 1e-5,
        format!("worst {worst:.2e} over {draws} draws ({skipped} rejected within 1e-3 of a kink)"),
    )
}

fn dynamics_oracles() -> Vec<Outcome> {
    let times: Vec<f64> = (0..101).map(|k| 2.0 * k as f64 / 100.0).collect();
    let constant = |u: Vec<f64>| vec![u; times.len()];

    let mut arc_err = 0f64;
    for omega in [0.5, -0.8, 1.2] {
        let values = constant(vec![omega]);
        let x = integrate_path(&Dubins::default(), &[0.0; 3], InputPath { times: &times, values: &values }, DEFAULT_DT_SUB).unwrap();
        let r = 2.0 / omega;
        let exact = [r * (2.0 * omega).sin(), r * (1.0 - (2.0 * omega).cos()), 2.0 * omega];
        arc_err = x.iter().zip(exact).fold(arc_err, |m, (a, b)| m.max((a - b).abs()));
    }

    let field = FnField { dim: 1, input_dim: 1, f: |_t: f64, x: &[f64], _u: &[f64], out: &mut [f64]| out[0] = x[0] };
    let unit = [0.0, 1.0];
    let zero = vec![vec![0.0]; 2];
    let path = InputPath { times: &unit, values: &zero };
    let e = |h: f64| (integrate_path(&field, &[1.0], path, h).unwrap()[0] - 1f64.exp()).abs();
    let ratio = e(0.1) / e(0.05);

    let values = constant(vec![0.0, 0.0]);
    let x0 = [1.0, -2.0, 8.0, -0.5];
    let x = integrate_path(&Bicycle, &x0, InputPath { times: &times, values: &values }, DEFAULT_DT_SUB).unwrap();

    vec![
        Outcome::new(
            "Dubins constant turn rate matches the circular arc to 1e-6 at dt_sub = 0.005",
            arc_err <= 1e-6,
            format!("max error {arc_err:.2e}"),
        ),
        Outcome::new(
            "RK4 error ratio for h = 0.1 vs 0.05 on x' = x lies in [8, 32]",
            (8.0..=32.0).contains(&ratio),
            format!("ratio {ratio:.3}"),
        ),
        Outcome::new(
            "Bicycle with zero input conserves speed exactly",
            x[2] == x0[2] && x[3] == x0[3],
            format!("speed {} -> {}, heading {} -> {}", x0[2], x[2], x0[3], x[3]),
        ),
    ]
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

fn sampler_feasibility() -> Vec<Outcome> {
    let cfg = preset("dubins-paper").unwrap();
    let bounds = cfg.agent.bounds().unwrap();
    let ens = sample_constrained_gp_paths(&cfg.gp().unwrap(), &bounds, 500, cfg.seed, cfg.gibbs).unwrap();
    let violations = ens.paths.iter().flatten().filter(|u| !bounds.contains(u)).count();
    let values = ens.paths.iter().map(Vec::len).sum::<usize>();

    let one = DMatrix::identity(1, 1);
    let wide: Vec<f64> = (0..10_000)
        .map(|s| sample_truncated_mvn_gibbs(vec![0.0], &one, vec![-1e6], vec![1e6], 5, 100, s).unwrap()[0])
        .collect();
    let (mean, var) = moments(&wide);
    let narrow_ok = (0..1000).all(|s| {
        let v = sample_truncated_mvn_gibbs(vec![0.0], &one, vec![-1.0], vec![1.0], 5, 100, s).unwrap()[0];
        (-1.0..=1.0).contains(&v)
    });
    let two = DMatrix::identity(2, 2);
    let orthant: Vec<Vec<f64>> = (0..10_000)
        .map(|s| sample_truncated_mvn_gibbs(vec![0.0; 2], &two, vec![0.0; 2], vec![1e8; 2], 5, 100, s).unwrap())
        .collect();
    let half = (2.0 / PI).sqrt();
    let orthant_err = (0..2)
        .map(|c| (moments(&orthant.iter().map(|x| x[c]).collect::<Vec<_>>()).0 - half).abs())
        .fold(0.0, f64::max);

    vec![
        Outcome::new(
            "Sampler: 500 Dubins-preset GP paths have zero bound violations",
            violations == 0 && ens.len() == 500,
            format!("{violations} violations among {values} values"),
        ),
        Outcome::new(
            "Sampler: 1-D truncated-normal moments (hard [-1,1], wide box, half-normal orthant)",
            narrow_ok && mean.abs() <= 0.05 && (var - 1.0).abs() <= 0.1 && orthant_err <= 0.02,
            format!(
                "[-1,1] respected: {narrow_ok}; wide mean {mean:.4}, var {var:.4}; orthant mean error {orthant_err:.4} (limit 0.02)"
            ),
        ),
    ]
}

fn dubins_epoch_trend() -> Vec<Outcome> {
    let cfg = preset("dubins-paper").unwrap();
    let grid = DirectionSet::default_grid(3).unwrap();
    let epochs = [5, 20, 40];
    let mut timing = Vec::new();
    let mut votes = 0;
    let mut lines = Vec::new();
    let start = Instant::now();
    for (i, seed) in [0u64, 1, 2].into_iter().enumerate() {
        let run = ExperimentConfig { seed, ..cfg.clone() };
        let data = generate(&run).unwrap();
        let qp = fit_samples(&run, &data.samples, Method::Qp, seed).unwrap();
        timing.push(TimingRow { instance: i + 1, method: Method::Qp, seconds: qp.seconds().unwrap() });
        let isnn = |e: usize| {
            let mut c = run.clone();
            c.isnn.adam.epochs = e;
            fit_samples(&c, &data.samples, Method::Isnn, seed).unwrap()
        };
        let gaps: Vec<f64> = epochs.iter().map(|&e| hausdorff_distance(&isnn(e), &qp, &grid).unwrap()).collect();
        // The reference timing table trains for 30 epochs.
        timing.push(TimingRow { instance: i + 1, method: Method::Isnn, seconds: isnn(30).seconds().unwrap() });
        let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
        votes += decreasing as usize;
        lines.push(format!("seed {seed}: {:.3} > {:.3} > {:.3} {}", gaps[0], gaps[1], gaps[2], if decreasing { "yes" } else { "no" }));
    }
    let elapsed = start.elapsed().as_secs_f64();

    let path = out_dir().join("timing.csv");
    let (header, body) = timing_csv_rows(&timing);
    let written = write_csv_rows(&path, &header, body).is_ok();
    let mean = |m: Method| {
        let s: Vec<f64> = timing.iter().filter(|r| r.method == m).map(|r| r.seconds).collect();
        s.iter().sum::<f64>() / s.len() as f64
    };
    vec![
        Outcome::new(
            "Dubins preset: ISNN-to-QP gap strictly decreases over 5, 20, 40 epochs (majority of 3 seeds)",
            votes >= 2,
            format!("{}; {elapsed:.1} s", lines.join("; ")),
        ),
        Outcome::new(
            "Timing harness writes an (instance, method, seconds) table; QP/ISNN ratio reported",
            written && timing.len() == 6,
            format!(
                "{} rows -> {}; mean QP {:.2} s, ISNN(30) {:.3} s, ratio {:.1}",
                timing.len(),
                path.display(),
                mean(Method::Qp),
                mean(Method::Isnn),
                mean(Method::Qp) / mean(Method::Isnn)
            ),
        ),
    ]
}

fn two_agent_hausdorff() -> Vec<Outcome> {
    let start = Instant::now();
    let cfg = ExperimentConfig { n_x: 200, ..two_agent_preset() };
    let grid = DirectionSet::default_grid(2).unwrap();
    let b = cfg.agent_b.clone().unwrap();
    let fit_at = |agent, seed| {
        let (_, mut obs) = generate_at(&cfg, agent, seed, &[0.05]).unwrap();
        let (_, cloud, samples) = obs.remove(0);
        (cloud, fit_samples(&cfg, &samples, Method::Qp, seed).unwrap())
    };
    let (cloud_a, qp_a) = fit_at(&cfg.agent, cfg.seed);
    let (cloud_b, qp_b) = fit_at(&b, cfg.seed + 1);
    let delta = hausdorff_distance(&qp_a, &qp_b, &grid).unwrap();
    let delta_cloud = hausdorff_distance(&cloud_a, &cloud_b, &grid).unwrap();
    let early = start.elapsed();

    let rows = two_agent_sweep(&cfg, &[Method::Isnn], &grid).unwrap();
    let path = out_dir().join("hausdorff_sweep.csv");
    let (header, body) = sweep_csv_rows(&rows);
    let written = write_csv_rows(&path, &header, body).is_ok();
    let total = start.elapsed();
    let isnn: Vec<String> = rows
        .iter()
        .filter(|r| r.method == "isnn")
        .map(|r| format!("{:.2}:{:.3}", r.tau, r.delta_h))
        .collect();
    let reaches_end = rows.last().is_some_and(|r| r.tau == cfg.t_final);
    vec![
        Outcome::new(
            "Two agents at tau = 0.05 s (QP fits): delta_H in [1.30, 1.55]",
            (1.30..=1.55).contains(&delta),
            format!("delta_H {delta:.4} (raw clouds {delta_cloud:.4}, singleton limit {:.4}); {:.1} s", 2f64.sqrt(), early.as_secs_f64()),
        ),
        Outcome::new(
            "Two-agent sweep to tau = 2 s with ISNN(40) completes and writes CSV within 10 min",
            written && reaches_end && within(total, 600),
            format!("tau:delta_H {} -> {}; {:.1} s total", isnn.join(" "), path.display(), total.as_secs_f64()),
        ),
    ]
}

fn evaluator_equivalence() -> Outcome {
    let cfg = ExperimentConfig { n_x: 100, n_y: 60, ..preset("dubins-paper").unwrap() };
    let data = generate(&cfg).unwrap();
    let Model::MaxAffine(m) = fit_samples(&cfg, &data.samples, Method::Qp, 0).unwrap() else {
        unreachable!("QP fit")
    };
    let dirs = DirectionSet::sample_uniform(3, 1000, 99).unwrap();
    let brute = empirical_support(&m.subgradient_cloud().unwrap(), &dirs).unwrap();
    let worst = dirs
        .iter()
        .zip(brute.values())
        .map(|(y, h)| (m.eval_dir(y) - h).abs())
        .fold(0.0, f64::max);
    Outcome::new(
        "Sublinear max-affine evaluation equals the support of its subgradient cloud (1000 directions)",
        worst <= 1e-12,
        format!("max difference {worst:.2e} (limit 1e-12)"),
    )
}

fn main() {
    // Integration tests receive harness flags; only `--list` needs an answer.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let _ = std::fs::create_dir_all(out_dir());

    let sections: Vec<(&str, fn() -> Vec<Outcome>)> = vec![
        ("isnn", || vec![isnn_sublinearity()]),
        ("qp", qp_oracles),
        ("qp", || vec![qp_convergence_trend()]),
        ("isnn", || vec![isnn_gradient_check()]),
        ("dynamics", dynamics_oracles),
        ("sampling", sampler_feasibility),
        ("experiment", dubins_epoch_trend),
        ("experiment", two_agent_hausdorff),
        ("qp", || vec![evaluator_equivalence()]),
    ];
    let mut unexpected = 0;
    let mut impossible = 0;
    for (criterion, (area, run)) in sections.into_iter().enumerate() {
        let (outcomes, t) = timed(run);
        for o in outcomes {
            let tag = if o.pass { "PASS" } else { "FAIL" };
            println!("[{tag}] {}. {area}: {} | {}", criterion + 1, o.name, o.detail);
            if !o.pass {
                match &o.impossible {
                    Some(why) => {
                        impossible += 1;
                        println!("       unattainable: {why}");
                    }
                    None => unexpected += 1,
                }
            }
        }
        log_time(criterion + 1, t);
    }
    println!("acceptance: {unexpected} unexpected failure(s), {impossible} unattainable bound(s)");
    if unexpected > 0 {
        std::process::exit(1);
    }
}

fn log_time(criterion: usize, t: Duration) {
    println!("       criterion {criterion} ran in {:.2} s", t.as_secs_f64());
}
