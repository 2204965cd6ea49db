//! Config-driven runs: single simulations, verification suites, family
//! sweeps and prediction tables, all persisted as CSV.

use std::fs;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{ExperimentConfig, InitialCondition, Suite};
use crate::error::{Error, Result};
use crate::evolve::{FrontProbe, Trajectory};
use crate::front::{diagonal_front_bounds, linear_spread_speed, CrossingMode, GrowthFit, GrowthLaw};
use crate::reaction::check_reaction_conditions;
use crate::suites::{certified_families, certify_subsolution, convolution_oracle, evolution_suite, inclusion_check, lambert_checks};
use crate::tailprofiles::{build_profile, Family};

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// A finished simulation and the growth fit of every front level.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub family: Family,
    pub trajectory: Trajectory,
    pub fits: Vec<(f64, Result<GrowthFit>)>,
    pub expansions: usize,
}

impl SimulationResult {
    /// Index of the level closest to `θ/2`.
    pub fn middle_level(&self) -> usize {
        let levels = &self.trajectory.probe.levels;
        (0..levels.len())
            .min_by(|&a, &b| (levels[a] - 0.5).abs().total_cmp(&(levels[b] - 0.5).abs()))
            .unwrap_or(0)
    }

    pub fn middle_fit(&self) -> Option<&GrowthFit> {
        self.fits.get(self.middle_level()).and_then(|(_, f)| f.as_ref().ok())
    }
}

/// Runs `cfg` with the dispersal kernel replaced by `family`. Field dumps
/// go to `dump_dir` when given and `run.field_dump_dt` is set.
pub fn simulate(cfg: &ExperimentConfig, family: &Family, dump_dir: Option<&Path>) -> Result<SimulationResult> {
    let mut state = cfg.build_state_with(cfg.kernel_for(family)?)?;
    let probe = FrontProbe::new(cfg.run.levels.clone(), cfg.crossing_mode());
    let dump = match (dump_dir, cfg.run.field_dump_dt) {
        (Some(d), Some(every)) => {
            fs::create_dir_all(d)?;
            Some((d, every))
        }
        _ => None,
    };
    let mut next_dump = 0.0;
    let mut io_error = None;
    let trajectory = state.solve(cfg.run.horizon, cfg.run.snapshot_dt, &probe, |s| {
        if let Some((dir, every)) = dump {
            if s.time() >= next_dump - 1e-9 {
                let path = dir.join(format!("field_t{:09.3}.csv", s.time()));
                let res = fs::File::create(&path)
                    .map_err(Error::from)
                    .and_then(|f| s.field().write_csv(std::io::BufWriter::new(f)));
                if let Err(e) = res {
                    io_error = Some(e);
                    return ControlFlow::Break(());
                }
                next_dump += every;
            }
        }
        ControlFlow::Continue(())
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let trace = trajectory.front_trace();
    let fits = (0..probe.levels.len())
        .map(|i| (probe.levels[i], trace.classify(i)))
        .collect();
    Ok(SimulationResult {
        family: family.clone(),
        trajectory,
        fits,
        expansions: state.expansions(),
    })
}

fn write_fit_csv(path: &Path, fits: &[(f64, Result<GrowthFit>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["level", "law", "slope", "intercept", "residual", "selected", "note"])
        .map_err(csv_err)?;
    for (level, fit) in fits {
        match fit {
            Ok(f) => {
                for c in &f.candidates {
                    w.write_record([
                        level.to_string(),
                        c.law.name().to_string(),
                        c.slope.to_string(),
                        c.intercept.to_string(),
                        c.residual.to_string(),
                        (c.law == f.law).to_string(),
                        String::new(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            Err(e) => {
                w.write_record([level.to_string(), String::new(), String::new(), String::new(), String::new(), "false".into(), e.to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Simulation with artifacts: `config.toml`, `trace.csv`, `fit.csv` and
/// `snapshots/` under `out`.
pub fn run_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<SimulationResult> {
    run_simulate_family(cfg, &cfg.kernel, out)
}

fn run_simulate_family(cfg: &ExperimentConfig, family: &Family, out: &Path) -> Result<SimulationResult> {
    fs::create_dir_all(out)?;
    let mut archived = cfg.clone();
    archived.kernel = family.clone();
    fs::write(out.join("config.toml"), archived.to_toml_string()?)?;
    let result = simulate(cfg, family, Some(&out.join("snapshots")))?;
    let f = fs::File::create(out.join("trace.csv"))?;
    result
        .trajectory
        .write_csv(std::io::BufWriter::new(f), |t| cfg.predicted_front(family, t))?;
    write_fit_csv(&out.join("fit.csv"), &result.fits)?;
    Ok(result)
}

/// The growth law a family should produce under `cfg`'s initial data,
/// with its parameter when it has a closed form.
pub fn predicted_law(cfg: &ExperimentConfig, family: &Family) -> Option<(GrowthLaw, Option<f64>)> {
    let beta = cfg.beta();
    let shift = match cfg.crossing_mode() {
        CrossingMode::Radial => 0.0,
        CrossingMode::Monotone => 1.0,
        CrossingMode::Diagonal => 2.0,
    };
    match *family {
        Family::Polynomial { mu, d, .. } => {
            let denom = d as f64 + mu - shift;
            Some((GrowthLaw::ExponentialInT, (denom > 0.0).then(|| beta / denom)))
        }
        Family::StretchedExp { gamma, .. } => Some((GrowthLaw::Power, Some(1.0 / gamma))),
        Family::AlmostLinear { lambda } => Some((GrowthLaw::TLogPower, Some(lambda))),
        Family::ExponentialControl { .. } | Family::GaussianControl { .. } => {
            let speed = cfg
                .kernel_for(family)
                .ok()
                .and_then(|k| linear_spread_speed(&k, cfg.model.kappa, cfg.model.m));
            Some((GrowthLaw::Linear, speed))
        }
        Family::LogStretched { .. } | Family::Table { .. } => None,
    }
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub family: String,
    pub predicted_law: Option<GrowthLaw>,
    pub predicted_param: Option<f64>,
    pub measured_law: Option<GrowthLaw>,
    pub fitted_param: Option<f64>,
    pub relative_error: Option<f64>,
    /// `ok`, `mismatch`, `no-prediction` or `failed: <reason>`.
    pub status: String,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        self.status.starts_with("failed")
    }
}

fn sweep_row(cfg: &ExperimentConfig, family: &Family, result: Result<SimulationResult>) -> SweepRow {
    let prediction = predicted_law(cfg, family);
    let mut row = SweepRow {
        family: family.name().to_string(),
        predicted_law: prediction.map(|p| p.0),
        predicted_param: prediction.and_then(|p| p.1),
        measured_law: None,
        fitted_param: None,
        relative_error: None,
        status: String::new(),
    };
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            row.status = format!("failed: {e}");
            return row;
        }
    };
    let Some(fit) = result.middle_fit() else {
        row.status = match &result.fits.get(result.middle_level()) {
            Some((_, Err(e))) => format!("failed: {e}"),
            _ => "failed: no front level".into(),
        };
        return row;
    };
    row.measured_law = Some(fit.law);
    let law = row.predicted_law.unwrap_or(fit.law);
    let fitted = fit.candidate(law).slope;
    row.fitted_param = Some(fitted);
    row.relative_error = row.predicted_param.map(|p| ((fitted - p) / p).abs());
    row.status = match row.predicted_law {
        None => "no-prediction".into(),
        Some(l) if l == fit.law => "ok".into(),
        Some(_) => "mismatch".into(),
    };
    row
}

/// One row per sweep family (the configured kernel when the config has no
/// sweep section), run concurrently on `jobs` threads. Each row writes its
/// artifacts to `out/rows/<index>-<family>/`; the table goes to
/// `out/sweep.csv`.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<SweepRow>> {
    let families = cfg
        .sweep
        .as_ref()
        .map(|s| s.families.clone())
        .unwrap_or_else(|| vec![cfg.kernel.clone()]);
    if families.is_empty() {
        return Err(Error::Config("sweep: no families".into()));
    }
    fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        families
            .par_iter()
            .enumerate()
            .map(|(i, fam)| {
                let dir = out.join("rows").join(format!("{i:02}-{}", fam.name()));
                sweep_row(cfg, fam, run_simulate_family(cfg, fam, &dir))
            })
            .collect()
    });
    let mut w = csv::Writer::from_path(out.join("sweep.csv")).map_err(csv_err)?;
    w.write_record([
        "family",
        "predicted_law",
        "predicted_param",
        "measured_law",
        "fitted_param",
        "relative_error",
        "status",
    ])
    .map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            r.family.clone(),
            r.predicted_law.map(|l| l.name().to_string()).unwrap_or_default(),
            opt(r.predicted_param),
            r.measured_law.map(|l| l.name().to_string()).unwrap_or_default(),
            opt(r.fitted_param),
            opt(r.relative_error),
            r.status.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(rows)
}

/// One line of `verification.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub suite: &'static str,
    pub parameters: String,
    pub measured: f64,
    pub tolerance: String,
    pub passed: bool,
}

fn row(suite: Suite, parameters: String, measured: f64, tol: f64) -> VerifyRow {
    VerifyRow {
        suite: suite.name(),
        parameters,
        measured,
        tolerance: format!("<= {tol:e}"),
        passed: measured <= tol,
    }
}

fn failed_row(suite: Suite, parameters: String, e: &Error) -> VerifyRow {
    VerifyRow {
        suite: suite.name(),
        parameters: format!("{parameters} error={e}"),
        measured: f64::NAN,
        tolerance: String::new(),
        passed: false,
    }
}

/// Runs the selected suites and writes `out/verification.csv`.
pub fn run_verify(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<VerifyRow>> {
    let suites = &cfg.verify.suites;
    if suites.is_empty() {
        return Err(Error::Config("verify: empty suite selection".into()));
    }
    let has = |s: Suite| suites.contains(&s);
    let mut rows = Vec::new();

    if has(Suite::ReactionConditions) {
        let spec = cfg.reaction()?;
        let theta = spec.theta();
        let sample: Vec<f64> = (0..=200).map(|i| theta * i as f64 / 200.0).collect();
        let rep = check_reaction_conditions(&spec, &sample);
        rows.push(VerifyRow {
            suite: Suite::ReactionConditions.name(),
            parameters: format!(
                "alpha={} k={} nu_scale={} endpoints={} linearization={} g_below_beta={}",
                cfg.reaction.alpha,
                cfg.reaction.k,
                cfg.reaction.nu_scale,
                rep.endpoint_zeros,
                rep.linearization_ok,
                rep.strict_g_below_beta
            ),
            measured: rep.worst_bound_excess,
            tolerance: "f <= beta r".into(),
            passed: rep.passed(),
        });
    }

    if has(Suite::ConvolutionOracle) {
        for (dim, max_n) in [(1u32, 128usize), (2, 64)] {
            let params = format!("dim={dim} instances=50 n<={max_n}");
            rows.push(match convolution_oracle(dim, 50, max_n, cfg.seed.wrapping_add(dim as u64)) {
                Ok(v) => row(Suite::ConvolutionOracle, params, v, 1e-10),
                Err(e) => failed_row(Suite::ConvolutionOracle, params, &e),
            });
        }
    }

    let evo = [Suite::Tube, Suite::Comparison, Suite::Majorant, Suite::Minorant];
    if evo.iter().any(|s| has(*s)) {
        let v = &cfg.verify;
        let params = format!("runs={} n={} horizon={} seed={}", v.runs, v.n, v.horizon, cfg.seed);
        let margins = cfg
            .kernel()
            .and_then(|k| evolution_suite(&k, &cfg.reaction()?, cfg.params()?, v.n, v.runs, v.horizon, cfg.seed));
        for (suite, tol) in [(Suite::Tube, 1e-8), (Suite::Comparison, 1e-8), (Suite::Majorant, 1e-6), (Suite::Minorant, 1e-6)] {
            if !has(suite) {
                continue;
            }
            rows.push(match &margins {
                Ok(m) => {
                    let value = match suite {
                        Suite::Tube => m.tube,
                        Suite::Comparison => m.comparison,
                        Suite::Majorant => m.majorant,
                        _ => m.minorant,
                    };
                    row(suite, params.clone(), value, tol)
                }
                Err(e) => failed_row(suite, params.clone(), e),
            });
        }
    }

    if has(Suite::Lambert) {
        match lambert_checks(&[1.5, 2.0, 3.0]) {
            Ok((residual, ratios)) => {
                rows.push(row(Suite::Lambert, "identity n=1000".into(), residual, 1e-13));
                for (lambda, r) in ratios {
                    let approaching = r.windows(2).all(|w| w[1] < w[0]) && r.iter().all(|&x| x > 1.0);
                    rows.push(VerifyRow {
                        suite: Suite::Lambert.name(),
                        parameters: format!("ratio lambda={lambda} t=1e4..1e7 first={}", r[0]),
                        measured: r[3],
                        tolerance: "decreasing toward 1".into(),
                        passed: approaching,
                    });
                }
            }
            Err(e) => rows.push(failed_row(Suite::Lambert, String::new(), &e)),
        }
    }

    if has(Suite::Subsolution) {
        let spec = cfg.reaction()?;
        let cases: Vec<(Family, f64)> = certified_families()
            .into_iter()
            .flat_map(|f| [0.1, 0.3].map(|e| (f.clone(), e)))
            .collect();
        let results: Vec<_> = cases
            .par_iter()
            .map(|(f, eps)| certify_subsolution(f, &spec, cfg.model.kappa, cfg.model.m, *eps))
            .collect();
        for ((f, eps), r) in cases.iter().zip(results) {
            let params = format!("family={} eps={eps}", f.name());
            rows.push(match r {
                Ok(c) => row(
                    Suite::Subsolution,
                    format!("{params} lambda={} tau0={}", c.lam, c.tau0),
                    c.worst_ratio,
                    1e-8,
                ),
                Err(e) => failed_row(Suite::Subsolution, params, &e),
            });
        }
    }

    if has(Suite::Inclusion) {
        for f in certified_families() {
            let params = format!("family={} eps=0.2 alpha0=0.76 t=50,100,200", f.name());
            let res = build_profile(f.clone()).and_then(|p| inclusion_check(&p, cfg.beta(), 0.2, 0.76, 50.0));
            rows.push(match res {
                Ok(inc) => VerifyRow {
                    suite: Suite::Inclusion.name(),
                    parameters: format!("{params} alpha={}", inc.alpha),
                    measured: inc.root_residual,
                    tolerance: "<= 1e-12 and holds at t, 2t, 4t".into(),
                    passed: inc.passed() && inc.root_residual <= 1e-12,
                },
                Err(e) => failed_row(Suite::Inclusion, params, &e),
            });
        }
    }

    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("verification.csv")).map_err(csv_err)?;
    w.write_record(["suite", "parameters", "measured", "tolerance", "pass"]).map_err(csv_err)?;
    for r in &rows {
        w.write_record([r.suite.to_string(), r.parameters.clone(), r.measured.to_string(), r.tolerance.clone(), r.passed.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Predicted front positions on the snapshot grid for the configured kernel
/// and every sweep family, as CSV (`t, family, predicted_eta, lower_bound`;
/// the lower bound only for orthant data).
pub fn write_predictions<W: Write>(cfg: &ExperimentConfig, out: W) -> Result<()> {
    let mut families = vec![cfg.kernel.clone()];
    if let Some(s) = &cfg.sweep {
        for f in &s.families {
            if !families.contains(f) {
                families.push(f.clone());
            }
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "family", "predicted_eta", "lower_bound"]).map_err(csv_err)?;
    let steps = (cfg.run.horizon / cfg.run.snapshot_dt).round() as usize;
    for k in 1..=steps {
        let t = (k as f64 * cfg.run.snapshot_dt).min(cfg.run.horizon);
        for f in &families {
            let lower = match cfg.initial {
                InitialCondition::OrthantIntegral { .. } => build_profile(f.clone())
                    .ok()
                    .and_then(|p| diagonal_front_bounds(&p, cfg.beta(), t, 0.25).ok())
                    .map(|b| b.0),
                _ => None,
            };
            w.write_record([t.to_string(), f.name().to_string(), opt(cfg.predicted_front(f, t)), opt(lower)])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
[model]
kappa = 1.5
m = 0.5

[kernel]
family = "exponential-control"
rate = 1.0

[grid]
dim = 1
half_width = 16.0
n = 64

[run]
horizon = 6.0
snapshot_dt = 0.25
field_dump_dt = 3.0
"#,
        )
        .unwrap()
    }

    #[test]
    fn simulate_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let r = run_simulate(&cfg, dir.path()).unwrap();
        assert_eq!(r.fits.len(), 3);
        for f in ["trace.csv", "fit.csv", "config.toml", "snapshots/field_t00000.000.csv", "snapshots/field_t00006.000.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert_eq!(trace.lines().next().unwrap(), "t,level,position,predicted_eta,boundary_mass");
        assert_eq!(trace.lines().count(), 1 + 25 * 3);
    }

    #[test]
    fn predicted_laws_by_family() {
        let cfg = small();
        let (law, speed) = predicted_law(&cfg, &cfg.kernel).unwrap();
        assert_eq!(law, GrowthLaw::Linear);
        assert!((speed.unwrap() - 2.99).abs() < 0.01);
        let p = Family::Polynomial { m: 1.0, mu: 1.0, d: 1 };
        assert_eq!(predicted_law(&cfg, &p), Some((GrowthLaw::ExponentialInT, Some(0.5))));
        assert_eq!(predicted_law(&cfg, &Family::LogStretched { scale: 1.0, c: 1.0, delta: 1.0, nu: 0.0 }), None);
    }

    #[test]
    fn sweep_marks_divergent_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.run.field_dump_dt = None;
        cfg.sweep = Some(crate::config::SweepSection {
            families: vec![cfg.kernel.clone(), Family::Polynomial { m: 1.0, mu: 0.0, d: 1 }],
        });
        let rows = run_sweep(&cfg, dir.path(), 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(!rows[0].failed() && rows[0].measured_law.is_some());
        assert!(rows[1].failed(), "{:?}", rows[1]);
        let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn verify_flags_seeded_reaction_failure() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.verify.suites = vec![Suite::ReactionConditions, Suite::Lambert];
        let rows = run_verify(&cfg, dir.path()).unwrap();
        assert!(rows.iter().all(|r| r.passed), "{rows:?}");
        cfg.reaction.nu_scale = 2.0;
        let rows = run_verify(&cfg, dir.path()).unwrap();
        assert!(!rows[0].passed);
        cfg.verify.suites.clear();
        assert!(matches!(run_verify(&cfg, dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn predictions_table() {
        let mut buf = Vec::new();
        let mut cfg = small();
        cfg.run.snapshot_dt = 1.0;
        write_predictions(&cfg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.lines().nth(1).unwrap().starts_with("1,exponential-control,1,"));
    }
}
