//! Acceptance run: one line per criterion. Criteria listed in `KNOWN_RED`
//! are reported but do not fail the run; see the README.

use std::ops::ControlFlow;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use frontlab::config::{ExperimentConfig, InitialCondition};
use frontlab::evolve::FrontProbe;
use frontlab::experiments::simulate;
use frontlab::front::{diagonal_front_bounds, CrossingMode, GrowthLaw};
use frontlab::reaction::ReactionSpec;
use frontlab::suites::{
    certified_families, certify_subsolution, convolution_oracle, evolution_suite, inclusion_check, lambert_checks,
};
use frontlab::tailprofiles::{build_profile, Family};
use frontlab::Result;

const KNOWN_RED: &[&str] = &["3b", "4c"];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    let mut cfg = ExperimentConfig::load(&path).expect("shipped config loads");
    cfg.run.field_dump_dt = None;
    cfg
}

fn fisher() -> ReactionSpec {
    ReactionSpec::fisher(1.0, 1.0)
}

fn convolution() -> Result<Outcome> {
    let one = convolution_oracle(1, 50, 128, 11)?;
    let two = convolution_oracle(2, 50, 64, 12)?;
    outcome(one.max(two) <= 1e-10, format!("worst relative gap 1D (n<=128) {one:.2e}, 2D (n<=64) {two:.2e} (tol 1e-10)"))
}

fn evolution() -> Result<Outcome> {
    let cfg = config("verify.toml");
    let m = evolution_suite(&cfg.kernel()?, &fisher(), cfg.params()?, 64, 20, 5.0, 7)?;
    let worst = m.tube.max(m.comparison).max(m.majorant).max(m.minorant);
    outcome(
        m.runs == 20 && worst <= 1e-6,
        format!(
            "{} runs: tube {:.2e}, comparison {:.2e}, majorant {:.2e}, minorant {:.2e} (tol 1e-6)",
            m.runs, m.tube, m.comparison, m.majorant, m.minorant
        ),
    )
}

fn lambert_identity() -> Result<Outcome> {
    let (res, _) = lambert_checks(&[])?;
    outcome(res <= 1e-13, format!("identity residual {res:.2e} on 1000 points (tol 1e-13)"))
}

fn lambert_ratio() -> Result<Outcome> {
    let (_, ratios) = lambert_checks(&[1.5, 2.0, 3.0])?;
    let at_1e6: Vec<(f64, f64)> = ratios.iter().map(|(l, r)| (*l, r[2])).collect();
    let ok = at_1e6.iter().all(|(_, r)| (0.9..=1.1).contains(r));
    let text: Vec<String> = at_1e6.iter().map(|(l, r)| format!("lambda {l}: {r:.3}")).collect();
    outcome(ok, format!("ratio at t=1e6 {} (want [0.9, 1.1])", text.join(", ")))
}

fn middle_fit(name: &str) -> Result<frontlab::front::GrowthFit> {
    let cfg = config(name);
    let res = simulate(&cfg, &cfg.kernel, None)?;
    let i = res.middle_level();
    res.trajectory.front_trace().classify(i)
}

fn polynomial_rate() -> Result<Outcome> {
    let fit = middle_fit("polynomial_bump.toml")?;
    let rate = fit.candidate(GrowthLaw::ExponentialInT).slope;
    outcome((rate - 0.5).abs() <= 0.25 * 0.5, format!("exponential rate {rate:.4} vs 0.5 (within 25%)"))
}

fn stretched_power() -> Result<Outcome> {
    let fit = middle_fit("stretched_bump.toml")?;
    let p = fit.candidate(GrowthLaw::Power).slope;
    outcome((1.6..=2.4).contains(&p), format!("power exponent {p:.3} (want [1.6, 2.4])"))
}

fn control_linear() -> Result<Outcome> {
    let fit = middle_fit("control_bump.toml")?;
    let lin = fit.residual(GrowthLaw::Linear);
    let others = [GrowthLaw::ExponentialInT, GrowthLaw::Power, GrowthLaw::TLogPower];
    let closest = others.iter().map(|&l| fit.residual(l)).fold(f64::INFINITY, f64::min);
    outcome(
        fit.law == GrowthLaw::Linear && 10.0 * lin <= closest,
        format!(
            "law {}, residuals linear {lin:.2e}, exponential-in-t {:.2e}, power {:.2e}, t-log-power {:.2e} (want linear with 10x margin)",
            fit.law.name(),
            fit.residual(GrowthLaw::ExponentialInT),
            fit.residual(GrowthLaw::Power),
            fit.residual(GrowthLaw::TLogPower)
        ),
    )
}

fn monotone_rate() -> Result<Outcome> {
    let fit = middle_fit("monotone_polynomial.toml")?;
    let rate = fit.candidate(GrowthLaw::ExponentialInT).slope;
    outcome((rate - 1.0).abs() <= 0.25, format!("exponential rate {rate:.4} vs 1 (within 25%)"))
}

fn diagonal() -> Result<Outcome> {
    let cfg = config("orthant_weibull.toml");
    let res = simulate(&cfg, &cfg.kernel, None)?;
    let (ts, xs) = res.trajectory.front_trace().series(res.middle_level());
    let (t, x) = match (ts.last(), xs.last()) {
        (Some(t), Some(x)) => (*t, *x),
        _ => return outcome(false, "no diagonal crossing recorded".into()),
    };
    let profile = build_profile(cfg.kernel.clone())?;
    let (lo, hi) = diagonal_front_bounds(&profile, cfg.beta(), t, 0.25)?;
    let p = frontlab::front::classify_growth(&ts, &xs)?.candidate(GrowthLaw::Power).slope;
    outcome(
        lo <= x && x <= hi && (1.5..=2.5).contains(&p),
        format!("X({t}) = {x:.1} in [{lo:.1}, {hi:.1}], power exponent {p:.3} (want [1.5, 2.5])"),
    )
}

fn subsolution() -> Result<Outcome> {
    let mut worst = f64::NEG_INFINITY;
    let mut parts = Vec::new();
    for f in certified_families() {
        for eps in [0.1, 0.3] {
            let c = certify_subsolution(&f, &fisher(), 1.5, 0.5, eps)?;
            worst = worst.max(c.worst_ratio);
            parts.push(format!("{} eps {eps}: {:.2e}", f.name(), c.worst_ratio));
        }
    }
    outcome(worst <= 1e-8, format!("residual/lambda {} (tol 1e-8)", parts.join(", ")))
}

fn inclusion() -> Result<Outcome> {
    let mut ok = true;
    let mut parts = Vec::new();
    for f in certified_families() {
        let inc = inclusion_check(&build_profile(f.clone())?, 1.0, 0.2, 0.76, 50.0)?;
        ok &= inc.passed() && inc.root_residual <= 1e-12;
        parts.push(format!("{} holds {:?} root residual {:.1e}", f.name(), inc.holds, inc.root_residual));
    }
    outcome(ok, parts.join("; "))
}

fn hair_trigger() -> Result<Outcome> {
    let mut cfg = config("control_bump.toml");
    cfg.kernel = Family::ExponentialControl { rate: 1.0 };
    cfg.initial = InitialCondition::Bump { height: 1e-3, radius: 1.0 };
    cfg.grid.half_width = 16.0;
    cfg.grid.n = 128;
    let mut state = cfg.build_state()?;
    let theta = state.theta();
    let mut reached = None;
    let probe = FrontProbe::new(vec![0.5], CrossingMode::Radial);
    state.solve(50.0, 0.25, &probe, |s| {
        let g = s.grid();
        let low = (0..g.len())
            .filter(|&k| g.point(k)[0].abs() <= 1.0)
            .map(|k| s.field().values()[k])
            .fold(f64::INFINITY, f64::min);
        if low >= 0.99 * theta {
            reached = Some(s.time());
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    match reached {
        Some(t) => outcome(true, format!("min on B1 >= 0.99 theta at t = {t} (want t <= 50)")),
        None => outcome(false, "min on B1 stayed below 0.99 theta up to t = 50".into()),
    }
}

type Check = fn() -> Result<Outcome>;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 12] = [
        ("1", convolution),
        ("2", evolution),
        ("3a", lambert_identity),
        ("3b", lambert_ratio),
        ("4a", polynomial_rate),
        ("4b", stretched_power),
        ("4c", control_linear),
        ("5", monotone_rate),
        ("6", diagonal),
        ("7", subsolution),
        ("8", inclusion),
        ("9", hair_trigger),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for (id, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let (passed, detail) = match run() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let known = KNOWN_RED.contains(&id);
        let verdict = match (passed, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        if !passed && !known {
            unexpected += 1;
        }
        println!("criterion {id}: {verdict} {detail} [{:.1} s]", start.elapsed().as_secs_f64());
    }
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
