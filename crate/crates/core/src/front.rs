//! Front extraction from fields, predicted front laws `η(t) = b⁻¹(e^{−βt})`
//! and their relatives, and growth-law classification of measured traces.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::quad;
use crate::tailprofiles::{Family, Kernel, TailProfile};

/// How a crossing position is read off a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossingMode {
    /// Outermost radius of the symmetrized (1D) or angle-averaged (2D) profile.
    Radial,
    /// Rightmost abscissa with `u ≥ level` (1D).
    Monotone,
    /// Outermost diagonal coordinate `X` with `u(X, X) ≥ level` (2D).
    Diagonal,
}

/// Angular samples used by the 2D radial reduction.
pub const ANGULAR_SAMPLES: usize = 64;

/// Position where `values` (sampled at `x0 + k·step`) last drops through `level`.
fn last_crossing(values: &[f64], x0: f64, step: f64, level: f64) -> Option<f64> {
    let k = values.iter().rposition(|&v| v >= level)?;
    if k + 1 == values.len() {
        return Some(x0 + k as f64 * step);
    }
    let (a, b) = (values[k], values[k + 1]);
    let frac = if a > b { (a - level) / (a - b) } else { 0.0 };
    Some(x0 + (k as f64 + frac.clamp(0.0, 1.0)) * step)
}

/// Crossing position of `level`; `None` when the field never reaches it.
pub fn level_crossing(field: &Field, level: f64, mode: CrossingMode) -> Option<f64> {
    let g = field.grid();
    let n = g.n();
    let h = g.spacing();
    let c = g.center();
    let u = field.values();
    match (mode, g.dim()) {
        (CrossingMode::Radial, 1) => {
            let prof: Vec<f64> = (0..c).map(|k| 0.5 * (u[c + k] + u[c - k])).collect();
            last_crossing(&prof, 0.0, h, level)
        }
        (CrossingMode::Radial, _) => {
            let prof: Vec<f64> = (0..c)
                .map(|k| {
                    if k == 0 {
                        return u[c * n + c];
                    }
                    let r = k as f64 * h;
                    (0..ANGULAR_SAMPLES)
                        .map(|j| {
                            let phi = 2.0 * PI * j as f64 / ANGULAR_SAMPLES as f64;
                            field.interpolate(&[r * phi.cos(), r * phi.sin()])
                        })
                        .sum::<f64>()
                        / ANGULAR_SAMPLES as f64
                })
                .collect();
            last_crossing(&prof, 0.0, h, level)
        }
        (CrossingMode::Monotone, 1) => last_crossing(u, g.coord(0), h, level),
        (CrossingMode::Monotone, _) => {
            // Crossing along the first axis through the middle row.
            let row: Vec<f64> = (0..n).map(|i| u[i * n + c]).collect();
            last_crossing(&row, g.coord(0), h, level)
        }
        (CrossingMode::Diagonal, 1) => last_crossing(u, g.coord(0), h, level),
        (CrossingMode::Diagonal, _) => {
            let diag: Vec<f64> = (0..n).map(|i| u[i * n + i]).collect();
            last_crossing(&diag, g.coord(0), h, level)
        }
    }
}

/// Shape of the level sets `Λ(t, c) = {c ≥ e^{−βt}}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelShape {
    /// `c(x) = b(|x|)`.
    Radial,
    /// `c(x) = ∫_{y ≥ x} b(|y|) dy`; in 2D read along the diagonal.
    Orthant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetSpec {
    pub shape: LevelShape,
    pub profile: TailProfile,
    pub beta: f64,
    pub dim: u32,
}

impl LevelSetSpec {
    pub fn new(shape: LevelShape, profile: TailProfile, beta: f64, dim: u32) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::ParameterOutOfRange(format!("β = {beta} must be positive")));
        }
        if dim != 1 && dim != 2 {
            return Err(Error::ParameterOutOfRange(format!("dimension {dim} not in {{1, 2}}")));
        }
        if shape == LevelShape::Orthant {
            profile.log_tail_moment(0.0, dim - 1)?;
        }
        Ok(LevelSetSpec { shape, profile, beta, dim })
    }

    /// `log c` at the scalar position used for this shape.
    pub fn log_c(&self, x: f64) -> f64 {
        match (self.shape, self.dim) {
            (LevelShape::Radial, _) => self.profile.log_eval(x),
            (LevelShape::Orthant, 1) => self.profile.log_tail_moment(x.max(0.0), 0).unwrap_or(f64::NEG_INFINITY),
            (LevelShape::Orthant, _) => log_diagonal_c(&self.profile, x),
        }
    }
}

/// `log[(π/2) ∫_{√2x}^∞ b(r) r dr]`, the diagonal majorant of the orthant integral.
pub fn log_diagonal_c(profile: &TailProfile, x: f64) -> f64 {
    FRAC_PI_2.ln()
        + profile
            .log_tail_moment((SQRT_2 * x).max(0.0), 1)
            .unwrap_or(f64::NEG_INFINITY)
}

/// Inverts a decreasing `log c` on `[0, ∞)` at `log_level`.
fn invert_decreasing<F: Fn(f64) -> f64>(log_c: F, log_level: f64) -> Result<f64> {
    let top = log_c(0.0);
    if !(log_level < top) {
        return Err(Error::LevelAboveRange {
            level: log_level.exp(),
            top: top.exp(),
        });
    }
    let mut hi = 1.0;
    while log_c(hi) > log_level {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NoRoot("level set radius beyond 1e300".into()));
        }
    }
    quad::bisect(|x| log_c(x) - log_level, 0.0, hi, 1e-14).ok_or_else(|| Error::NoRoot("level set bracket".into()))
}

/// Radius (or crossing abscissa) of `Λ(t, c)`.
pub fn lambda_radius(spec: &LevelSetSpec, t: f64) -> Result<f64> {
    let log_level = -spec.beta * t;
    match spec.shape {
        LevelShape::Radial => spec.profile.inverse_log(log_level),
        LevelShape::Orthant => invert_decreasing(|x| spec.log_c(x), log_level),
    }
}

/// Lower real branch `W₋₁` of the Lambert function on `[−1/e, 0)`.
pub fn lambert_w_minus1(nu: f64) -> Result<f64> {
    let branch = -(-1.0f64).exp();
    if !(nu >= branch && nu < 0.0) {
        return Err(Error::OutOfBranchDomain(nu));
    }
    if nu == branch {
        return Ok(-1.0);
    }
    let mut w = if nu < -0.25 {
        // Series about the branch point.
        let p = -(2.0 * (1.0 + std::f64::consts::E * nu)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        let l1 = (-nu).ln();
        l1 - (-l1).ln()
    };
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - nu;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let next = w - f / denom;
        if !next.is_finite() {
            break;
        }
        let done = (next - w).abs() <= 1e-15 * w.abs();
        w = next.min(-1.0);
        if done {
            break;
        }
    }
    Ok(w)
}

/// Earliest `t` for which the predicted law of a profile is defined.
pub fn eta_threshold(profile: &TailProfile, beta: f64) -> f64 {
    match *profile.family() {
        Family::AlmostLinear { lambda } => (std::f64::consts::E / lambda).powf(lambda) / beta,
        _ => -profile.inner_value().ln() / beta,
    }
}

/// The family's front law `η(t)`.
///
/// Polynomial tails and the controls invert `b` exactly; log-stretched and
/// stretched-exponential tails give the leading scale; almost-linear tails
/// use the closed form in terms of `W₋₁`.
pub fn predicted_eta(profile: &TailProfile, beta: f64, t: f64) -> Result<f64> {
    let threshold = eta_threshold(profile, beta);
    if !(t > threshold) {
        return Err(Error::BelowThreshold { t, threshold });
    }
    let bt = beta * t;
    Ok(match *profile.family() {
        Family::Polynomial { m, mu, d } => ((m.ln() + bt) / (d as f64 + mu)).exp() - 1.0,
        Family::LogStretched { c, delta, .. } => (bt / c).powf(1.0 / (1.0 + delta)).exp(),
        Family::StretchedExp { c, gamma, .. } => (bt / c).powf(1.0 / gamma),
        Family::AlmostLinear { lambda } => {
            let w = lambert_w_minus1(-1.0 / (lambda * bt.powf(1.0 / lambda)))?;
            lambda.powf(lambda) * bt * (-w).powf(lambda)
        }
        Family::ExponentialControl { rate } => bt / rate,
        Family::GaussianControl { rate } => (bt / rate).sqrt(),
        Family::Table { .. } => profile.inverse_log(-bt)?,
    })
}

/// `(½ μ(t − εt), μ(t))` with `μ(t)` the inverse of the diagonal majorant
/// `(π/2) ∫_{√2x}^∞ b(r) r dr` at `e^{−βt}`.
pub fn diagonal_front_bounds(profile: &TailProfile, beta: f64, t: f64, eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::ParameterOutOfRange(format!("ε = {eps} must lie in (0, 1)")));
    }
    profile.log_tail_moment(0.0, 1)?;
    let mu = |s: f64| {
        invert_decreasing(|x| log_diagonal_c(profile, x), -beta * s).map_err(|_| Error::BelowThreshold {
            t: s,
            threshold: log_diagonal_c(profile, 0.0).max(0.0) / beta,
        })
    };
    let upper = mu(t)?;
    let lower = 0.5 * mu(t - eps * t)?;
    Ok((lower, upper))
}

/// Linear spreading speed `inf_{s>0} (κ M(s) − m)/s` with
/// `M(s) = ∫ a(y) e^{sy} dy`, for a one-dimensional kernel.
///
/// `None` when `M(s)` is infinite for every `s > 0` (the kernel is heavy).
pub fn linear_spread_speed(kernel: &Kernel, kappa: f64, m: f64) -> Option<f64> {
    if kernel.dim() != 1 || !(kappa > m && m >= 0.0) {
        return None;
    }
    let profile = kernel.profile();
    // Light tails keep their log-slope away from 0; heavy ones flatten out.
    let far = profile.rho().max(1.0) * 1e4;
    let s_max = -profile.log_slope(far);
    if !(s_max > 0.0) || -profile.log_slope(1e2 * far) < 0.5 * s_max {
        return None;
    }
    let s_max = s_max.min(1e3);
    let rho = profile.rho();
    let moment = |s: f64| {
        let f = |y: f64| 2.0 * kernel.eval_radial(y) * (s * y).cosh();
        let mut breaks = vec![0.0];
        if rho > 0.0 {
            breaks.push(rho);
        }
        let start = rho.max(1.0);
        breaks.push(start);
        let body = quad::integrate_panels(f, &breaks, 1e-13);
        let tail = quad::integrate_to_infinity(f, start, 1.0 / (s_max - s), 1e-12);
        body + tail
    };
    let speed = |s: f64| (kappa * moment(s) - m) / s;
    let s = quad::golden_min(speed, 1e-3 * s_max, 0.999 * s_max, 1e-10);
    Some(speed(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthLaw {
    /// `c₁ + c₂ t`.
    Linear,
    /// `exp(c₁ + c₂ t)`.
    ExponentialInT,
    /// `c t^p`.
    Power,
    /// `c t (log t)^λ`.
    TLogPower,
}

impl GrowthLaw {
    pub const ALL: [GrowthLaw; 4] = [
        GrowthLaw::Linear,
        GrowthLaw::ExponentialInT,
        GrowthLaw::Power,
        GrowthLaw::TLogPower,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GrowthLaw::Linear => "linear",
            GrowthLaw::ExponentialInT => "exponential-in-t",
            GrowthLaw::Power => "power",
            GrowthLaw::TLogPower => "t-log-power",
        }
    }
}

/// One least-squares candidate: `intercept` and `slope` of its linearized fit
/// (slope is the speed, the rate, the exponent or `λ` respectively).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub law: GrowthLaw,
    pub intercept: f64,
    pub slope: f64,
    /// RMS relative residual `(fit − x)/x`; infinite when the law was not fitted.
    pub residual: f64,
}

impl Candidate {
    pub fn predict(&self, t: f64) -> f64 {
        match self.law {
            GrowthLaw::Linear => self.intercept + self.slope * t,
            GrowthLaw::ExponentialInT => (self.intercept + self.slope * t).exp(),
            GrowthLaw::Power => (self.intercept + self.slope * t.ln()).exp(),
            GrowthLaw::TLogPower => t * (self.intercept + self.slope * t.ln().ln()).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthFit {
    pub law: GrowthLaw,
    pub candidates: Vec<Candidate>,
    /// Points used after burn-in.
    pub points: usize,
}

impl GrowthFit {
    pub fn best(&self) -> &Candidate {
        self.candidate(self.law)
    }

    pub fn candidate(&self, law: GrowthLaw) -> &Candidate {
        self.candidates.iter().find(|c| c.law == law).expect("all laws present")
    }

    pub fn residual(&self, law: GrowthLaw) -> f64 {
        self.candidate(law).residual
    }
}

/// Minimum number of post-burn-in points for [`classify_growth`].
pub const MIN_FIT_POINTS: usize = 12;
/// Fraction of leading points discarded as burn-in.
pub const BURN_IN_FRACTION: f64 = 0.2;
/// The `t (log t)^λ` law is only fitted where `log t > 2`.
pub const TLOG_MIN_T: f64 = 10.0;
/// An accelerating law replaces the linear one only if its residual is below
/// this fraction of the linear residual. A power law with exponent near 1
/// fits linear data as well as the linear law does, so noise alone would
/// otherwise decide between them.
pub const LINEAR_PREFERENCE: f64 = 0.9;

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

/// Fits the four growth laws to `(t, x)` samples and picks the one with the
/// smallest RMS relative residual, keeping the linear law unless an
/// accelerating one beats it by the factor [`LINEAR_PREFERENCE`].
///
/// The first 20% of the samples are dropped, as are samples with `t ≤ 0` or
/// `x ≤ 0`. All laws are scored on the same points, except that the
/// `t (log t)^λ` law is fitted and scored on `t ≥ 10` only.
pub fn classify_growth(times: &[f64], positions: &[f64]) -> Result<GrowthFit> {
    let skip = (BURN_IN_FRACTION * times.len() as f64).ceil() as usize;
    let (ts, xs): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(positions)
        .skip(skip)
        .filter(|(t, x)| **t > 0.0 && **x > 0.0 && x.is_finite())
        .map(|(t, x)| (*t, *x))
        .unzip();
    if ts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData {
            have: ts.len(),
            need: MIN_FIT_POINTS,
        });
    }
    let score = |c: &Candidate, ts: &[f64], xs: &[f64]| {
        let s: f64 = ts
            .iter()
            .zip(xs)
            .map(|(&t, &x)| {
                let r = (c.predict(t) - x) / x;
                r * r
            })
            .sum();
        (s / ts.len() as f64).sqrt()
    };
    let logs: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let log_ts: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let mut candidates = Vec::with_capacity(4);
    for law in GrowthLaw::ALL {
        let mut c = Candidate {
            law,
            intercept: 0.0,
            slope: 0.0,
            residual: f64::INFINITY,
        };
        match law {
            GrowthLaw::Linear => {
                (c.intercept, c.slope) = least_squares(&ts, &xs);
                c.residual = score(&c, &ts, &xs);
            }
            GrowthLaw::ExponentialInT => {
                (c.intercept, c.slope) = least_squares(&ts, &logs);
                c.residual = score(&c, &ts, &xs);
            }
            GrowthLaw::Power => {
                (c.intercept, c.slope) = least_squares(&log_ts, &logs);
                c.residual = score(&c, &ts, &xs);
            }
            GrowthLaw::TLogPower => {
                let (tt, xx): (Vec<f64>, Vec<f64>) =
                    ts.iter().zip(&xs).filter(|(t, _)| **t >= TLOG_MIN_T).map(|(t, x)| (*t, *x)).unzip();
                if tt.len() >= MIN_FIT_POINTS {
                    let lx: Vec<f64> = tt.iter().map(|t| t.ln().ln()).collect();
                    let ly: Vec<f64> = tt.iter().zip(&xx).map(|(t, x)| (x / t).ln()).collect();
                    (c.intercept, c.slope) = least_squares(&lx, &ly);
                    c.residual = score(&c, &tt, &xx);
                }
            }
        }
        if !c.residual.is_finite() {
            c.residual = f64::INFINITY;
        }
        candidates.push(c);
    }
    let fastest = candidates[1..]
        .iter()
        .min_by(|a, b| a.residual.total_cmp(&b.residual))
        .expect("nonempty");
    let law = if fastest.residual < LINEAR_PREFERENCE * candidates[0].residual {
        fastest.law
    } else {
        GrowthLaw::Linear
    };
    Ok(GrowthFit {
        law,
        candidates,
        points: ts.len(),
    })
}

/// Measured crossing positions over time, one series per level.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrontTrace {
    pub levels: Vec<f64>,
    pub times: Vec<f64>,
    /// `positions[level][time]`.
    pub positions: Vec<Vec<Option<f64>>>,
}

impl FrontTrace {
    pub fn new(levels: Vec<f64>) -> Self {
        let positions = vec![Vec::new(); levels.len()];
        FrontTrace {
            levels,
            times: Vec::new(),
            positions,
        }
    }

    /// Appends a time; times must increase strictly.
    pub fn push(&mut self, t: f64, at_levels: Vec<Option<f64>>) -> Result<()> {
        if self.times.last().is_some_and(|&last| t <= last) {
            return Err(Error::ParameterOutOfRange(format!("trace time {t} does not increase")));
        }
        if at_levels.len() != self.levels.len() {
            return Err(Error::InvalidSize("one position per level expected".into()));
        }
        self.times.push(t);
        for (series, p) in self.positions.iter_mut().zip(at_levels) {
            series.push(p);
        }
        Ok(())
    }

    /// Times and positions at which level `index` was crossed.
    pub fn series(&self, index: usize) -> (Vec<f64>, Vec<f64>) {
        self.times
            .iter()
            .zip(&self.positions[index])
            .filter_map(|(t, p)| p.map(|p| (*t, p)))
            .unzip()
    }

    pub fn classify(&self, index: usize) -> Result<GrowthFit> {
        let (t, x) = self.series(index);
        classify_growth(&t, &x)
    }
}
