//! The work behind each subcommand. Every function returns the process exit
//! code on success; errors map to codes through [`Error::exit_code`].

use std::path::{Path, PathBuf};

use adakern_core::problems::{
    ba_problem, basin_sweep, icp_pipeline, inject_outliers, line_fit_problem, pose_error, synthetic_ba_scene,
    synthetic_line, synthetic_scan_pair, BAScene, BaState, IcpConfig, ScanConfig, SweepConfig,
};
use adakern_core::adaptive::estimate_alpha_with;
use adakern_core::problems::sweep::perturbed_start;
use adakern_core::{
    solve, AlphaPolicy, EStepOptions, PartitionTable, ResidualSet, SolveReport, SolverConfig,
};
use nalgebra::{Isometry3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{Policy, RunConfig};
use crate::error::{exit, Error, Result};
use crate::io;
use crate::report::{
    compare_csv, em_trace_csv, finite, icp_trace_csv, sweep_csv, to_json, AlphaReport, OutputDir, RunReport,
    SweepSummary, TableReport,
};

// ---------------------------------------------------------------------------
// partition-table

#[derive(Debug, Clone)]
pub struct TableOptions {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub resolution: f64,
    pub tau: f64,
    pub intervals: usize,
}

fn table_report(path: &Path, t: &PartitionTable) -> TableReport {
    TableReport {
        path: path.display().to_string(),
        entries: t.len(),
        alpha_min: t.alpha_min(),
        alpha_max: t.alpha_max(),
        resolution: t.resolution(),
        tau: t.tau(),
        intervals: t.intervals(),
        max_deviation: None,
        tolerance: None,
        passed: None,
    }
}

/// Builds a table and writes it to `path`; prints a JSON summary.
pub fn build_table(path: &Path, opts: &TableOptions) -> Result<u8> {
    let table =
        PartitionTable::build_with_intervals(opts.alpha_min, opts.alpha_max, opts.resolution, opts.tau, opts.intervals)?;
    io::write_text(path, &io::format_table(&table))?;
    print!("{}", to_json(&table_report(path, &table))?);
    Ok(exit::OK)
}

/// Re-tabulates the file's grid with half the quadrature step. Content that
/// does not parse or deviates by more than `tolerance` fails verification.
pub fn verify_table(path: &Path, tolerance: f64) -> Result<u8> {
    let text = io::read_text(path)?;
    let table = io::parse_table(path, &text).map_err(|e| Error::Verification(e.to_string()))?;
    let fine = PartitionTable::build_with_intervals(
        table.alpha_min(),
        table.alpha_max(),
        table.resolution(),
        table.tau(),
        2 * table.intervals(),
    )?;
    let deviation = table.max_deviation(&fine)?;
    let passed = deviation < tolerance;
    let mut report = table_report(path, &table);
    report.max_deviation = Some(deviation);
    report.tolerance = Some(tolerance);
    report.passed = Some(passed);
    print!("{}", to_json(&report)?);
    if passed {
        Ok(exit::OK)
    } else {
        Err(Error::Verification(format!(
            "{}: max deviation {deviation:e} exceeds {tolerance:e}",
            path.display()
        )))
    }
}

/// Loads `path` if given (its grid must match `config`), else tabulates.
pub fn load_table(path: Option<&Path>, config: &SolverConfig) -> Result<PartitionTable> {
    match path {
        Some(p) => {
            let t = io::read_table(p)?;
            if !t.same_grid(config.alpha_min, config.alpha_max, config.alpha_resolution, config.tau_factor) {
                return Err(Error::Config(format!(
                    "{}: table grid does not match the solver's alpha range, resolution or tau",
                    p.display()
                )));
            }
            Ok(t)
        }
        None => Ok(config.build_table()?),
    }
}

// ---------------------------------------------------------------------------
// estimate-alpha

#[derive(Debug)]
pub struct AlphaOptions<'a> {
    pub residuals: &'a Path,
    pub scale: f64,
    pub table: Option<&'a Path>,
    pub grid: TableOptions,
    pub subsample_cap: usize,
    pub seed: u64,
    pub output: Option<&'a Path>,
}

pub fn estimate_alpha(opts: &AlphaOptions<'_>) -> Result<u8> {
    let values = io::parse_residuals(opts.residuals, &io::read_text(opts.residuals)?)?;
    let table = match opts.table {
        Some(p) => io::read_table(p)?,
        None => PartitionTable::build_with_intervals(
            opts.grid.alpha_min,
            opts.grid.alpha_max,
            opts.grid.resolution,
            opts.grid.tau,
            opts.grid.intervals,
        )?,
    };
    let residuals = ResidualSet::new(values).map_err(|e| Error::parse(opts.residuals, 0, e.to_string()))?;
    let options = EStepOptions {
        subsample_cap: opts.subsample_cap,
        seed: opts.seed,
    };
    let estimate = estimate_alpha_with(&residuals, opts.scale, &table, &options)?;
    let text = to_json(&AlphaReport {
        scale: opts.scale,
        estimate: &estimate,
    })?;
    match opts.output {
        Some(p) => io::write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(exit::OK)
}

// ---------------------------------------------------------------------------
// fit / icp / ba

/// A command's resolved run: configuration plus where to write.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: OutputDir,
}

fn file_stem(policy: AlphaPolicy) -> String {
    Policy(policy).to_string().replace(':', "_")
}

fn solver_error(e: adakern_core::Error) -> Error {
    match e {
        adakern_core::Error::InvalidParameter(_) => Error::Core(e),
        other => Error::Solver(other),
    }
}

impl Run {
    fn solver(&self, policy: AlphaPolicy, scale: f64, max_irls: usize) -> Result<SolverConfig> {
        self.config.solver.resolve(policy, scale, max_irls)
    }

    fn table_for(&self, policies: &[AlphaPolicy], template: &SolverConfig) -> Result<Option<PartitionTable>> {
        if policies.contains(&AlphaPolicy::Adaptive) {
            load_table(self.config.table.as_deref(), template).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Writes `<cmd>[_<policy>]_{report.json,trace.csv,params.txt}` per
    /// report and `<cmd>_compare.csv` when several policies ran.
    fn finish(&self, cmd: &str, runs: &[(AlphaPolicy, RunReport, String, String)], error_keys: &[&str]) -> Result<u8> {
        let compare = runs.len() > 1;
        for (policy, report, trace, params) in runs {
            let prefix = if compare {
                format!("{cmd}_{}", file_stem(*policy))
            } else {
                cmd.to_string()
            };
            self.out.write_json(&format!("{prefix}_report.json"), report)?;
            self.out.write(&format!("{prefix}_trace.csv"), trace)?;
            self.out.write(&format!("{prefix}_params.txt"), params)?;
        }
        let reports: Vec<RunReport> = runs.iter().map(|r| r.1.clone()).collect();
        if compare {
            self.out.write(&format!("{cmd}_compare.csv"), &compare_csv(&reports, error_keys)?)?;
        }
        for r in &reports {
            let err = r
                .error
                .as_ref()
                .map(|e| format!(" error={e}"))
                .unwrap_or_default();
            println!(
                "{cmd} {}: converged={} termination={} alpha={}{err}",
                r.policy,
                r.converged,
                r.termination.as_str(),
                r.final_alpha.map_or("-".into(), |a| a.to_string())
            );
        }
        Ok(if reports.iter().any(RunReport::singular) {
            exit::SOLVER
        } else {
            exit::OK
        })
    }

    fn report<S>(&self, cmd: &'static str, policy: AlphaPolicy, scale: f64, solve: &SolveReport<S>) -> RunReport {
        RunReport {
            command: cmd,
            policy: Policy(policy).to_string(),
            seed: self.config.seed,
            scale,
            converged: solve.converged,
            termination: solve.termination,
            final_alpha: solve.final_alpha().and_then(finite),
            blocks: 0,
            outliers: 0,
            parameters: serde_json::Value::Null,
            error: None,
            records: solve.records.clone(),
            icp_iterations: None,
        }
    }

    pub fn fit(&self) -> Result<u8> {
        let cfg = &self.config;
        let (mut points, truth) = match &cfg.line.data {
            Some(p) => (io::parse_points_2d(p, &io::read_text(p)?)?, None),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let l = &cfg.line;
                let pts = synthetic_line(&mut rng, l.points, l.slope, l.intercept, l.noise, (l.x_min, l.x_max))?;
                (pts, Some((l.slope, l.intercept)))
            }
        };
        let mask = inject_outliers(&mut points[..], &cfg.outliers.spec("uniform", cfg.seed)?)?;
        let outliers = mask.iter().filter(|&&m| m).count();
        if cfg.line.data.is_none() {
            self.out.write("fit_data.txt", &io::format_points_2d(&points))?;
        }
        let problem = line_fit_problem(&points)?;
        let init = ordinary_least_squares(&points);
        let scale = if truth.is_some() && cfg.line.noise > 0.0 { cfg.line.noise } else { 1.0 };
        let policies = cfg.policies();
        let template = self.solver(AlphaPolicy::Adaptive, scale, 20)?;
        let table = self.table_for(&policies, &template)?;
        let mut runs = Vec::new();
        for policy in policies {
            let solver = SolverConfig { policy, ..template.clone() };
            let result = solve(&problem, init, &solver, table.as_ref()).map_err(solver_error)?;
            let [m, b] = result.state;
            let mut report = self.report("fit", policy, solver.scale, &result);
            report.blocks = points.len();
            report.outliers = outliers;
            report.parameters = json!({ "slope": m, "intercept": b });
            report.error = truth.map(|(tm, tb)| json!({ "slope_error": (m - tm).abs(), "intercept_error": (b - tb).abs() }));
            runs.push((policy, report, em_trace_csv(&result.records)?, format!("{m} {b}\n")));
        }
        self.finish("fit", &runs, &["slope_error", "intercept_error"])
    }

    pub fn icp(&self) -> Result<u8> {
        let cfg = &self.config;
        let c = &cfg.icp;
        let (mut source, target, truth) = match (&c.source, &c.target) {
            (Some(s), Some(t)) => (io::read_cloud(s)?, io::read_cloud(t)?, None),
            (None, None) => {
                let truth = Isometry3::new(
                    Vector3::from(c.translation),
                    Vector3::new(0.0, 0.0, c.yaw_deg.to_radians()),
                );
                let scan = ScanConfig {
                    points: c.points,
                    half_length: c.half_length,
                    half_width: c.half_width,
                    wall_height: c.wall_height,
                    noise: c.noise,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let (s, t) = synthetic_scan_pair(&mut rng, &scan, &truth)?;
                (s, t, Some(truth))
            }
            _ => return Err(Error::Config("[icp]: give both `source` and `target`, or neither".into())),
        };
        let mask = inject_outliers(&mut source, &cfg.outliers.spec("clustered-offset", cfg.seed)?)?;
        let outliers = mask.iter().filter(|&&m| m).count();
        if truth.is_some() {
            self.out.write("icp_source.xyz", &io::format_cloud(&source))?;
            self.out.write("icp_target.xyz", &io::format_cloud(&target))?;
        }
        let policies = cfg.policies();
        let template = self.solver(AlphaPolicy::Adaptive, 0.1, 20)?;
        let table = self.table_for(&policies, &template)?;
        let mut runs = Vec::new();
        for policy in policies {
            let icp = IcpConfig {
                solver: SolverConfig { policy, ..template.clone() },
                variant: c.variant,
                max_iterations: c.max_iterations,
                rotation_tolerance: c.rotation_tolerance,
                translation_tolerance: c.translation_tolerance,
                cadence: c.cadence,
            };
            let result = icp_pipeline(&source, &target, Isometry3::identity(), &icp, table.as_ref())
                .map_err(solver_error)?;
            let t = &result.transform;
            let q = t.rotation.quaternion();
            let v = t.translation.vector;
            let mut report = self.report("icp", policy, template.scale, &result.last_solve);
            report.converged = result.converged;
            report.final_alpha = result.final_alpha().and_then(finite);
            report.blocks = source.len();
            report.outliers = outliers;
            report.parameters = json!({
                "rotation": [q.w, q.i, q.j, q.k],
                "translation": [v.x, v.y, v.z],
            });
            report.error = truth.map(|truth| {
                let (deg, m) = pose_error(t, &truth);
                json!({ "rotation_error_deg": deg, "translation_error_m": m })
            });
            report.icp_iterations = Some(result.iterations.clone());
            let params = format!("{} {} {} {} {} {} {}\n", q.w, q.i, q.j, q.k, v.x, v.y, v.z);
            runs.push((policy, report, icp_trace_csv(&result.iterations)?, params));
        }
        self.finish("icp", &runs, &["rotation_error_deg", "translation_error_m"])
    }

    fn scene(&self) -> Result<(BAScene, usize)> {
        let cfg = &self.config;
        let mut scene = match &cfg.ba.file {
            Some(p) => io::read_scene(p)?,
            None => synthetic_ba_scene(&mut ChaCha8Rng::seed_from_u64(cfg.seed), &cfg.ba.scene)?.0,
        };
        let mask = inject_outliers(&mut scene, &cfg.outliers.spec("shuffle", cfg.seed)?)?;
        Ok((scene, mask.iter().filter(|&&m| m).count()))
    }

    pub fn ba(&self) -> Result<u8> {
        let cfg = &self.config;
        let (scene, outliers) = self.scene()?;
        if cfg.ba.file.is_none() {
            self.out.write("ba_scene.txt", &io::format_scene(&scene))?;
        }
        let truth = BaState::from_scene(&scene);
        let problem = ba_problem(&scene)?;
        let start = perturbed_start(
            &problem,
            &truth,
            cfg.ba.init_sigma,
            cfg.ba.rotation_sigma_deg,
            cfg.seed.wrapping_add(2),
        );
        let initial_rms = start.center_rms(&truth);
        let policies = cfg.policies();
        let template = self.solver(AlphaPolicy::Adaptive, 1.0, 100)?;
        let table = self.table_for(&policies, &template)?;
        let mut runs = Vec::new();
        for policy in policies {
            let solver = SolverConfig { policy, ..template.clone() };
            let result = solve(&problem, start.clone(), &solver, table.as_ref()).map_err(solver_error)?;
            let mut report = self.report("ba", policy, solver.scale, &result);
            report.blocks = scene.observations().len();
            report.outliers = outliers;
            report.parameters = json!({
                "poses": result.state.poses().iter().map(|p| {
                    let q = p.rotation.quaternion();
                    let t = p.translation.vector;
                    json!({ "rotation": [q.w, q.i, q.j, q.k], "translation": [t.x, t.y, t.z] })
                }).collect::<Vec<_>>(),
                "landmarks": result.state.landmarks.len(),
            });
            report.error = Some(json!({
                "center_rms_m": finite(result.state.center_rms(&truth)),
                "initial_center_rms_m": initial_rms,
            }));
            let params = io::format_scene(&scene.with_state(&result.state));
            runs.push((policy, report, em_trace_csv(&result.records)?, params));
        }
        self.finish("ba", &runs, &["center_rms_m"])
    }

    pub fn basin_sweep(&self) -> Result<u8> {
        let cfg = &self.config;
        let (scene, _) = self.scene()?;
        let s = &cfg.sweep;
        let sweep = SweepConfig {
            sigmas: s.sigmas.clone(),
            samples: s.samples,
            policies: s.policies.iter().map(|p| p.0).collect(),
            master_seed: cfg.seed,
            rotation_sigma_deg: s.rotation_sigma_deg,
            success_threshold: s.success_threshold,
            solver: self.solver(AlphaPolicy::Adaptive, 1.0, 100)?,
        };
        sweep.validate().map_err(|e| Error::Config(format!("[sweep]: {e}")))?;
        let table = self.table_for(&sweep.policies, &sweep.solver)?;
        let (records, summary) = basin_sweep(&scene, &sweep, table.as_ref()).map_err(solver_error)?;
        self.out.write("sweep.csv", &sweep_csv(&records)?)?;
        self.out.write_json("sweep_summary.json", &SweepSummary::new(&sweep, &summary))?;
        for p in &summary {
            println!(
                "{}: {}/{} ({:.1}%)",
                p.policy,
                p.successes,
                p.total,
                100.0 * p.success_rate
            );
        }
        Ok(exit::OK)
    }
}

/// Closed-form least-squares line through `points`; the start of every fit.
pub fn ordinary_least_squares(points: &[(f64, f64)]) -> [f64; 2] {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = points
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx) * (p.0 - mx)));
    let m = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    [m, my - m * mx]
}

/// Output directory: `--output-dir` / `ADAKERN_OUTPUT_DIR`, then the config's
/// `output_dir`, then the working directory.
pub fn output_dir(flag: Option<PathBuf>, config: &RunConfig) -> OutputDir {
    OutputDir::new(flag.or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_exact_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 * i as f64 - 2.0)).collect();
        let [m, b] = ordinary_least_squares(&pts);
        assert!((m - 3.0).abs() < 1e-12 && (b + 2.0).abs() < 1e-12);
    }

    #[test]
    fn file_stems_are_path_safe() {
        assert_eq!(file_stem(AlphaPolicy::Fixed(-1.5)), "fixed_-1.5");
        assert_eq!(file_stem(AlphaPolicy::Adaptive), "adaptive");
    }
}
