//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`cargo test --test acceptance`). A failing
//! criterion is reported, not raised, so the rest still run; the process
//! exits 0 either way and the verdict lives in the printed lines.

mod common;

use std::f64::consts::{PI, SQRT_2};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use adakern_core::kernel::KernelFamily;
use adakern_core::partition::log_partition_with_intervals;
use adakern_core::problems::{
    basin_sweep, icp_pipeline, inject_outliers, line_fit_problem, pose_error, synthetic_ba_scene, synthetic_line,
    synthetic_scan_pair, BaSceneConfig, IcpConfig, OutlierModel, OutlierSpec, PointCloud, ScanConfig, SweepConfig,
};
use adakern_core::{
    em_solve, estimate_alpha, irls_solve, log_density, rho, rho_prime, solve, weight, AlphaPolicy, BlockJacobian,
    KernelParams, NamedKernel, PartitionTable, Problem, ResidualSet, SolveReport, SolverConfig,
};
use common::{primary_outputs, run, s, write};
use nalgebra::{Isometry3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn criterion(id: u32, name: &str, limit: Duration, body: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let (pass, detail) = match result {
        Ok(o) => {
            let in_time = elapsed < limit;
            let timing = if in_time { String::new() } else { format!("; over the {:?} limit", limit) };
            (o.pass && in_time, format!("{}{timing}", o.detail))
        }
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    println!(
        "{} criterion {id} ({name}) [{:.1}s]: {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

// ---------------------------------------------------------------------------
// 1. kernel closed forms

/// Closed forms of the named kernels: (rho, rho', weight).
fn closed_form(alpha: f64, r: f64, c: f64) -> (f64, f64, f64) {
    let x = (r / c).powi(2);
    if alpha == 2.0 {
        (0.5 * x, r / (c * c), 1.0 / (c * c))
    } else if alpha == 1.0 {
        let s = (x + 1.0).sqrt();
        (s - 1.0, r / (c * c * s), 1.0 / (c * c * s))
    } else if alpha == 0.0 {
        (
            (0.5 * x + 1.0).ln(),
            2.0 * r / (r * r + 2.0 * c * c),
            2.0 / (r * r + 2.0 * c * c),
        )
    } else if alpha == -2.0 {
        let d = x + 4.0;
        (2.0 * x / d, 16.0 * r / (c * c * d * d), 16.0 / (c * c * d * d))
    } else {
        let e = (-0.5 * x).exp();
        (1.0 - e, r / (c * c) * e, e / (c * c))
    }
}

fn kernels() -> Outcome {
    let mut worst: Vec<(f64, f64)> = Vec::new();
    for (alpha, label) in [(2.0, 2.0), (1.0, 1.0), (0.0, 0.0), (-2.0, -2.0), (-1e6, f64::NEG_INFINITY)] {
        let mut err: f64 = 0.0;
        for c in [0.5, 1.0, 3.0] {
            let p = KernelParams::new(alpha, c).unwrap();
            for i in 0..=2000 {
                let r = -10.0 * c + 20.0 * c * i as f64 / 2000.0;
                let oracle_alpha = if label.is_finite() { label } else { -1e300 };
                let (f, d, w) = closed_form(oracle_alpha, r, c);
                let got = (rho(r, p).unwrap(), rho_prime(r, p).unwrap(), weight(r, p).unwrap());
                for (a, b) in [(got.0, f), (got.1, d), (got.2, w)] {
                    err = err.max((a - b).abs() / b.abs().max(1.0));
                }
            }
        }
        worst.push((label, err));
    }
    // named kernels go through their own closed forms
    let mut named_err: f64 = 0.0;
    for family in KernelFamily::ALL {
        let k = NamedKernel::new(family, 1.7).unwrap();
        for i in 0..=200 {
            let r = -17.0 + 34.0 * i as f64 / 200.0;
            let (f, _, _) = closed_form(family.alpha().max(-1e300), r, 1.7);
            named_err = named_err.max((adakern_core::named_rho(r, k).unwrap() - f).abs() / f.abs().max(1.0));
        }
    }

    let mut fd_err: f64 = 0.0;
    let mut identity_err: f64 = 0.0;
    for alpha in [-10.0, -5.0, -2.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
        for c in [0.5, 1.0, 3.0] {
            let p = KernelParams::new(alpha, c).unwrap();
            for i in 0..=400 {
                let r = -10.0 * c + 20.0 * c * i as f64 / 400.0;
                if r.abs() < 1e-12 {
                    continue;
                }
                let h = 1e-5 * c.max(r.abs());
                let fd = (rho(r + h, p).unwrap() - rho(r - h, p).unwrap()) / (2.0 * h);
                let d = rho_prime(r, p).unwrap();
                fd_err = fd_err.max((fd - d).abs() / d.abs());
                identity_err = identity_err.max((weight(r, p).unwrap() * r - d).abs() / d.abs());
            }
        }
    }
    let closed_ok = worst.iter().all(|(_, e)| *e <= 1e-6) && named_err <= 1e-6;
    let detail = format!(
        "closed-form rel err {}; named {named_err:.1e}; FD gradient rel err {fd_err:.1e}; w*r vs rho' {identity_err:.1e}",
        worst
            .iter()
            .map(|(a, e)| format!("a={a}: {e:.1e}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    outcome(closed_ok && fd_err <= 1e-6 && identity_err <= 1e-12, detail)
}

// ---------------------------------------------------------------------------
// 2. partition function

fn partition(table: &PartitionTable) -> Outcome {
    let tau: f64 = 10.0;
    let z2 = ((2.0 * PI).sqrt() * libm::erf(tau / SQRT_2)).ln();
    let z0 = (2.0 * SQRT_2 * (tau / SQRT_2).atan()).ln();
    let e2 = (table.log_z_at(2.0).unwrap() - z2).abs();
    let e0 = (table.log_z_at(0.0).unwrap() - z0).abs();

    let mut halving: f64 = 0.0;
    for (i, alpha) in table.alphas().enumerate() {
        let fine = log_partition_with_intervals(alpha, tau, 2 * table.intervals()).unwrap();
        halving = halving.max((fine - table.log_z()[i]).abs());
    }

    // trapezoid over the truncated support
    let c = 0.7;
    let mut norm: f64 = 0.0;
    for alpha in [-10.0, -5.0, 0.0, 1.0, 2.0] {
        let p = KernelParams::new(alpha, c).unwrap();
        let n = 200_000;
        let h = 2.0 * tau * c / n as f64;
        let mut sum = 0.0;
        for i in 0..=n {
            let r = -tau * c + h * i as f64;
            let f = log_density(r, p, table).unwrap().exp();
            sum += if i == 0 || i == n { 0.5 * f } else { f };
        }
        norm = norm.max((sum * h - 1.0).abs());
    }
    outcome(
        e2 < 1e-5 && e0 < 1e-5 && halving < 1e-8 && norm < 1e-4 && table.len() == 121,
        format!(
            "|log Z(2) - erf form| {e2:.1e}, |log Z(0) - atan form| {e0:.1e}, step halving {halving:.1e} over {} nodes, normalization {norm:.1e}",
            table.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. alpha estimation

fn contaminated_residuals(seed: u64, fraction: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inlier = Normal::new(0.0, 1.0).unwrap();
    let mut values: Vec<f64> = (0..10_000).map(|_| inlier.sample(&mut rng)).collect();
    let k = (fraction * values.len() as f64).round() as usize;
    let mut out_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let outlier = Uniform::new(-8.0, 8.0).unwrap();
    for v in values.iter_mut().take(k) {
        *v = outlier.sample(&mut out_rng);
    }
    values
}

fn alpha_estimation(table: &PartitionTable) -> Outcome {
    let est = |v: Vec<f64>| estimate_alpha(&ResidualSet::new(v).unwrap(), 1.0, table).unwrap().alpha;
    let mut gauss_ok = 0;
    let mut dirty_ok = 0;
    let mut mono_ok = 0;
    let mut dirty_alphas = Vec::new();
    for seed in 0..20 {
        let alphas: Vec<f64> = [0.0, 0.1, 0.3, 0.5].iter().map(|&f| est(contaminated_residuals(seed, f))).collect();
        gauss_ok += (alphas[0] >= 1.5) as usize;
        dirty_ok += (alphas[2] <= 0.0) as usize;
        dirty_alphas.push(alphas[2]);
        mono_ok += alphas.windows(2).all(|w| w[1] <= w[0] + 0.1 + 1e-9) as usize;
    }
    dirty_alphas.sort_by(f64::total_cmp);
    outcome(
        gauss_ok == 20 && dirty_ok == 20 && mono_ok == 20,
        format!(
            "Gaussian alpha >= 1.5 on {gauss_ok}/20; 30% uniform alpha <= 0 on {dirty_ok}/20 (range {}..{}); monotone on {mono_ok}/20",
            dirty_alphas[0],
            dirty_alphas[19]
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. EM solver

struct Location(Vec<f64>);

impl Problem for Location {
    type State = f64;
    fn tangent_dim(&self) -> usize {
        1
    }
    fn num_blocks(&self) -> usize {
        self.0.len()
    }
    fn block_dim(&self, _: usize) -> usize {
        1
    }
    fn residual(&self, theta: &f64, i: usize, out: &mut [f64]) -> bool {
        out[0] = theta - self.0[i];
        true
    }
    fn jacobian(&self, _: &f64, _: usize, jac: &mut BlockJacobian) {
        jac.segment(0, 1)[0] = 1.0;
    }
    fn plus(&self, theta: &f64, delta: &[f64]) -> f64 {
        theta + delta[0]
    }
}

fn ols(points: &[(f64, f64)]) -> [f64; 2] {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    [sxy / sxx, my - sxy / sxx * mx]
}

fn cost_monotone<S>(report: &SolveReport<S>) -> bool {
    let costs: Vec<f64> = report.records.iter().filter_map(|r| r.adaptive_cost).collect();
    let initial = costs.first().map_or(1.0, |c| c.abs().max(1.0));
    costs.windows(2).all(|w| w[1] <= w[0] + 1e-9 * initial)
}

fn em_solver(table: &PartitionTable) -> Outcome {
    let mut runs = 0;
    let mut monotone = 0;

    // line fit: 30% uniform outliers in y, c = inlier sigma
    let sigma = 0.5;
    let mut line_ok = 0;
    let mut squared_worse = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = synthetic_line(&mut rng, 200, 2.0, 1.0, sigma, (-5.0, 5.0)).unwrap();
        let spec = OutlierSpec::new(0.3, OutlierModel::Uniform { low: -50.0, high: 50.0 }, seed + 1000).unwrap();
        let mask = inject_outliers(&mut pts[..], &spec).unwrap();
        let n_in = mask.iter().filter(|m| !**m).count() as f64;
        let bound = 3.0 * sigma / n_in.sqrt() * 5.0;
        let problem = line_fit_problem(&pts).unwrap();
        let config = SolverConfig::default().with_scale(sigma);
        let adaptive = em_solve(&problem, ols(&pts), &config, table).unwrap();
        runs += 1;
        monotone += cost_monotone(&adaptive) as usize;
        let [m, b] = adaptive.state;
        line_ok += ((m - 2.0).abs() < bound && (b - 1.0).abs() < bound) as usize;
        let squared = solve(&problem, ols(&pts), &config.clone().with_policy(AlphaPolicy::Squared), None).unwrap();
        let err = |s: [f64; 2]| ((s[0] - 2.0).powi(2) + (s[1] - 1.0).powi(2)).sqrt();
        squared_worse += (err(squared.state) > err(adaptive.state)) as usize;

        // outlier-free runs count towards monotonicity too
        let clean = synthetic_line(&mut ChaCha8Rng::seed_from_u64(seed + 50), 200, 2.0, 1.0, sigma, (-5.0, 5.0)).unwrap();
        let report = em_solve(&line_fit_problem(&clean).unwrap(), [0.0, 0.0], &config, table).unwrap();
        runs += 1;
        monotone += cost_monotone(&report) as usize;
    }

    // mean estimation with 30% gross outliers
    let mut mean_ok = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(10.0, 1.0).unwrap();
        let gross = Uniform::new(50.0, 150.0).unwrap();
        let mut z: Vec<f64> = (0..700).map(|_| noise.sample(&mut rng)).collect();
        z.extend((0..300).map(|_| gross.sample(&mut rng)));
        let inlier_mean = z[..700].iter().sum::<f64>() / 700.0;
        let bound = 5.0 / 700f64.sqrt();
        let problem = Location(z);
        let config = SolverConfig::default().with_scale(1.0);
        let report = em_solve(&problem, 0.0, &config, table).unwrap();
        runs += 1;
        monotone += cost_monotone(&report) as usize;
        let squared = solve(&problem, 0.0, &config.clone().with_policy(AlphaPolicy::Squared), None).unwrap();
        mean_ok += (report.final_alpha().unwrap() <= 0.0
            && (report.state - inlier_mean).abs() < bound
            && (squared.state - inlier_mean).abs() > bound) as usize;
    }

    // fixed Cauchy against a dense grid search
    let z = vec![0.0, 0.0, 0.0, 0.0, 100.0];
    let cauchy = |t: f64| z.iter().map(|zi| (0.5 * (t - zi).powi(2) + 1.0).ln()).sum::<f64>();
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=1_020_000 {
        let t = -1.0 + i as f64 * 1e-4;
        let v = cauchy(t);
        if v < best.0 {
            best = (v, t);
        }
    }
    let config = SolverConfig { max_irls_iterations: 200, ..SolverConfig::default() };
    let fitted = irls_solve(&Location(z.clone()), 20.0, KernelParams::new(0.0, 1.0).unwrap(), &config).unwrap();
    let cauchy_err = (fitted.state - best.1).abs();

    outcome(
        monotone == runs && line_ok == 20 && squared_worse >= 18 && mean_ok == 20 && cauchy_err < 0.05,
        format!(
            "adaptive cost monotone on {monotone}/{runs} runs; line within bound {line_ok}/20, squared worse {squared_worse}/20; \
             mean estimation {mean_ok}/20; Cauchy vs grid search {cauchy_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. ICP

fn icp(table: &PartitionTable) -> Outcome {
    let truth = Isometry3::new(Vector3::new(0.3, 0.1, 0.0), Vector3::new(0.0, 0.0, 10f64.to_radians()));
    let scans = |seed: u64, fraction: f64| -> (PointCloud<3>, PointCloud<3>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ScanConfig { noise: 0.01, ..ScanConfig::default() };
        let (mut source, target) = synthetic_scan_pair(&mut rng, &cfg, &truth).unwrap();
        let model = OutlierModel::ClusteredOffset { magnitude: 3.0, cluster_size: 25 };
        inject_outliers(&mut source, &OutlierSpec::new(fraction, model, seed + 500).unwrap()).unwrap();
        (source, target)
    };
    let run_icp = |source: &PointCloud<3>, target: &PointCloud<3>, policy: AlphaPolicy| {
        let config = IcpConfig {
            solver: SolverConfig::default().with_scale(0.1).with_policy(policy),
            ..IcpConfig::default()
        };
        let report = icp_pipeline(source, target, Isometry3::identity(), &config, Some(table)).unwrap();
        let (deg, m) = pose_error(&report.transform, &truth);
        (deg, m, report.final_alpha().unwrap())
    };
    let mut good = 0;
    let mut squared_bad = 0;
    let mut dirty_alpha = Vec::new();
    let mut clean_alpha = Vec::new();
    for seed in 0..20 {
        let (source, target) = scans(seed, 0.4);
        let (deg, m, alpha) = run_icp(&source, &target, AlphaPolicy::Adaptive);
        good += (deg < 0.5 && m < 0.05) as usize;
        dirty_alpha.push(alpha);
        let (deg, m, _) = run_icp(&source, &target, AlphaPolicy::Squared);
        squared_bad += (deg > 2.0 && m > 0.2) as usize;
        let (source, target) = scans(seed, 0.0);
        clean_alpha.push(run_icp(&source, &target, AlphaPolicy::Adaptive).2);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        0.5 * (v[9] + v[10])
    };
    let (md, mc) = (median(&mut dirty_alpha), median(&mut clean_alpha));
    outcome(
        good >= 18 && squared_bad >= 10 && md <= mc - 1.0,
        format!(
            "adaptive within 0.5 deg / 5 cm on {good}/20; squared beyond 2 deg / 20 cm on {squared_bad}/20; \
             median alpha {md} at 40% vs {mc} at 0%"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. bundle-adjustment basin sweep

fn basin(table: &PartitionTable) -> Outcome {
    let (scene, _) = synthetic_ba_scene(&mut ChaCha8Rng::seed_from_u64(0), &BaSceneConfig::default()).unwrap();
    let config = SweepConfig::default();
    let (_, summary) = basin_sweep(&scene, &config, Some(table)).unwrap();
    let adaptive = summary.iter().find(|p| p.policy == "adaptive").unwrap().success_rate;
    let margin_ok = summary
        .iter()
        .filter(|p| p.policy != "adaptive")
        .all(|p| adaptive >= p.success_rate + 0.05 - 1e-12);
    let rates = summary
        .iter()
        .map(|p| {
            let per: Vec<String> = p.per_sigma.iter().map(|(s, r)| format!("{s}:{:.0}%", 100.0 * r)).collect();
            format!("{} {:.1}% [{}]", p.policy, 100.0 * p.success_rate, per.join(" "))
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(margin_ok, format!("success rates: {rates}"))
}

// ---------------------------------------------------------------------------
// 7. determinism of the CLI

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let residuals: String = (0..2000).map(|_| format!("{}\n", noise.sample(&mut rng))).collect();
    let res = write(root, "residuals.txt", &residuals);
    let cfg = write(
        root,
        "run.toml",
        "[outliers]\nfraction = 0.2\n[sweep]\nsigmas = [0.0, 0.5]\nsamples = 2\n",
    );
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("partition-table", vec![]),
        ("estimate-alpha", vec![]),
        ("fit", vec!["--compare".into(), "adaptive,squared,huber".into()]),
        ("icp", vec!["--compare".into(), "adaptive,squared".into()]),
        ("ba", vec!["--compare".into(), "adaptive,huber".into()]),
        ("basin-sweep", vec![]),
    ];
    let mut failures = Vec::new();
    for (name, extra) in &commands {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out_dir = root.join(format!("{name}-{rep}"));
            let mut args: Vec<String> = vec![name.to_string()];
            match *name {
                "partition-table" => args.extend(["--output-dir".into(), s(&out_dir).into()]),
                "estimate-alpha" => {
                    std::fs::create_dir_all(&out_dir).unwrap();
                    args.extend([
                        s(&res).into(),
                        "--seed".into(),
                        "5".into(),
                        "--output".into(),
                        s(&out_dir.join("alpha.json")).into(),
                    ]);
                }
                _ => args.extend([
                    "--config".into(),
                    s(&cfg).into(),
                    "--seed".into(),
                    "11".into(),
                    "--output-dir".into(),
                    s(&out_dir).into(),
                ]),
            }
            args.extend(extra.iter().cloned());
            let argv: Vec<&str> = args.iter().map(String::as_str).collect();
            let out = run(&argv);
            if !out.status.success() {
                failures.push(format!("{name} exited {:?}", out.status.code()));
            }
            // stdout echoes the output path, which differs by design
            let stdout = String::from_utf8_lossy(&out.stdout).replace(s(&out_dir), "<out>");
            outputs.push((primary_outputs(&out_dir), stdout));
        }
        if outputs[0] != outputs[1] {
            failures.push(format!("{name} differs between runs"));
        }
        if outputs[0].0.is_empty() {
            failures.push(format!("{name} wrote nothing"));
        }
    }
    // the seed must actually reach the data
    let other = root.join("fit-other");
    run(&["fit", "--config", s(&cfg), "--seed", "12", "--output-dir", s(&other)]);
    let a = std::fs::read(root.join("fit-0").join("fit_data.txt")).unwrap_or_default();
    let b = std::fs::read(other.join("fit_data.txt")).unwrap_or_default();
    if a == b {
        failures.push("fit data ignores --seed".into());
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} commands byte-identical on rerun", commands.len())
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    println!("acceptance suite");
    let mut passed = 0;
    let mut total = 0;
    let mut tally = |ok: bool| {
        total += 1;
        passed += ok as usize;
    };

    tally(criterion(1, "kernel correctness", Duration::from_secs(1), kernels));

    let mut table = None;
    tally(criterion(2, "partition correctness", Duration::from_secs(10), || {
        let t = PartitionTable::build_default().unwrap();
        let o = partition(&t);
        table = Some(t);
        o
    }));
    let table = table.unwrap_or_else(|| PartitionTable::build_default().unwrap());

    tally(criterion(3, "alpha estimation", Duration::from_secs(30), || alpha_estimation(&table)));
    tally(criterion(4, "EM solver", Duration::from_secs(30), || em_solver(&table)));
    tally(criterion(5, "ICP at desk scale", Duration::from_secs(120), || icp(&table)));
    tally(criterion(6, "BA basin sweep", Duration::from_secs(600), || basin(&table)));
    tally(criterion(7, "CLI determinism", Duration::from_secs(300), determinism));
    println!("{passed}/{total} criteria passed");
}
