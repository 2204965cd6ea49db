//! Heavy-tailed radial profiles `b: [0, ∞) → (0, ∞)` and the normalized
//! dispersal kernels built from them.
//!
//! Every profile is the family formula on its tail `[ρ, ∞)` continued by the
//! constant `b(ρ)` on `[0, ρ]`, so it is bounded, positive and nonincreasing.
//! `ρ` is the smallest abscissa beyond which the formula is strictly
//! decreasing, log-convex (accelerating families only) and at most 1.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

fn one() -> f64 {
    1.0
}

/// Parametric tail families. Controls decay at least exponentially and do
/// not produce accelerated fronts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// `M / (1 + s)^(d + μ)`.
    Polynomial { m: f64, mu: f64, d: u32 },
    /// `scale · s^ν · exp(-c (log s)^(1+δ))`.
    LogStretched {
        #[serde(default = "one")]
        scale: f64,
        c: f64,
        delta: f64,
        #[serde(default)]
        nu: f64,
    },
    /// `scale · s^ν · exp(-c s^γ)`, `γ ∈ (0, 1)`.
    StretchedExp {
        #[serde(default = "one")]
        scale: f64,
        c: f64,
        gamma: f64,
        #[serde(default)]
        nu: f64,
    },
    /// `exp(-s / (log s)^λ)`, `λ > 1`.
    AlmostLinear { lambda: f64 },
    /// `exp(-rate · s)`.
    ExponentialControl { rate: f64 },
    /// `exp(-rate · s²)`.
    GaussianControl { rate: f64 },
    /// Log-linear interpolation through `(s, b)` points, continued past the
    /// last point with the last log-slope.
    Table { points: Vec<[f64; 2]> },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Polynomial { .. } => "polynomial",
            Family::LogStretched { .. } => "log-stretched",
            Family::StretchedExp { .. } => "stretched-exp",
            Family::AlmostLinear { .. } => "almost-linear",
            Family::ExponentialControl { .. } => "exponential-control",
            Family::GaussianControl { .. } => "gaussian-control",
            Family::Table { .. } => "table",
        }
    }

    /// True for the families whose tails drive accelerated propagation.
    pub fn is_accelerating(&self) -> bool {
        !matches!(
            self,
            Family::ExponentialControl { .. } | Family::GaussianControl { .. } | Family::Table { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::ParameterOutOfRange(format!("{}: {}", self.name(), what)));
        let finite = |x: f64| x.is_finite();
        match *self {
            Family::Polynomial { m, mu, d } => {
                if !(m > 0.0 && finite(m)) {
                    return bad("M must be positive");
                }
                if d == 0 || d > 3 {
                    return bad("d must be 1, 2 or 3");
                }
                // μ ≤ 0 still gives a decreasing profile; integrability is
                // checked when a kernel is normalized.
                if !(finite(mu) && d as f64 + mu > 0.0) {
                    return bad("d + μ must be positive");
                }
            }
            Family::LogStretched { scale, c, delta, nu } => {
                if !(scale > 0.0 && c > 0.0 && delta > 0.0 && finite(nu) && finite(scale) && finite(c)) {
                    return bad("need scale > 0, c > 0, δ > 0");
                }
            }
            Family::StretchedExp { scale, c, gamma, nu } => {
                if !(scale > 0.0 && c > 0.0 && finite(scale) && finite(c) && finite(nu)) {
                    return bad("need scale > 0, c > 0");
                }
                if !(gamma > 0.0 && gamma < 1.0) {
                    return bad("γ must lie in (0, 1)");
                }
            }
            Family::AlmostLinear { lambda } => {
                if !(lambda > 1.0 && finite(lambda)) {
                    return bad("λ must exceed 1");
                }
            }
            Family::ExponentialControl { rate } | Family::GaussianControl { rate } => {
                if !(rate > 0.0 && finite(rate)) {
                    return bad("rate must be positive");
                }
            }
            Family::Table { ref points } => {
                if points.len() < 2 {
                    return bad("need at least two points");
                }
                for w in points.windows(2) {
                    if !(w[1][0] > w[0][0]) {
                        return bad("abscissae must increase");
                    }
                    if !(w[1][1] < w[0][1]) {
                        return bad("values must strictly decrease");
                    }
                }
                if points[0][0] < 0.0 || points.iter().any(|p| !(p[1] > 0.0) || !p[1].is_finite()) {
                    return bad("abscissae must be nonnegative and values positive");
                }
                if points[0][1] > 1.0 {
                    return bad("first value must not exceed 1");
                }
            }
        }
        Ok(())
    }

    /// Natural log of the family formula; `None` outside its domain.
    fn log_formula(&self, s: f64) -> Option<f64> {
        match *self {
            Family::Polynomial { m, mu, d } => Some(m.ln() - (d as f64 + mu) * s.ln_1p()),
            Family::LogStretched { scale, c, delta, nu } => {
                if s < 1.0 {
                    return None;
                }
                let l = s.ln();
                Some(scale.ln() + nu * l - c * l.powf(1.0 + delta))
            }
            Family::StretchedExp { scale, c, gamma, nu } => {
                if s <= 0.0 {
                    return None;
                }
                Some(scale.ln() + nu * s.ln() - c * s.powf(gamma))
            }
            Family::AlmostLinear { lambda } => {
                if s <= 1.0 {
                    return None;
                }
                Some(-s / s.ln().powf(lambda))
            }
            Family::ExponentialControl { rate } => Some(-rate * s),
            Family::GaussianControl { rate } => Some(-rate * s * s),
            Family::Table { ref points } => Some(table_log(points, s)),
        }
    }

    /// First and second derivatives of the log-formula.
    fn log_derivatives(&self, s: f64) -> Option<(f64, f64)> {
        match *self {
            Family::Polynomial { mu, d, .. } => {
                let p = d as f64 + mu;
                Some((-p / (1.0 + s), p / ((1.0 + s) * (1.0 + s))))
            }
            Family::LogStretched { c, delta, nu, .. } => {
                if s <= 1.0 {
                    return None;
                }
                let l = s.ln();
                let g1 = nu - c * (1.0 + delta) * l.powf(delta);
                let g2 = -c * (1.0 + delta) * delta * l.powf(delta - 1.0);
                Some((g1 / s, (g2 - g1) / (s * s)))
            }
            Family::StretchedExp { c, gamma, nu, .. } => {
                if s <= 0.0 {
                    return None;
                }
                Some((
                    nu / s - c * gamma * s.powf(gamma - 1.0),
                    -nu / (s * s) - c * gamma * (gamma - 1.0) * s.powf(gamma - 2.0),
                ))
            }
            Family::AlmostLinear { lambda } => {
                if s <= 1.0 {
                    return None;
                }
                let l = s.ln();
                let psi1 = l.powf(-lambda - 1.0) * (l - lambda);
                let psi2 = lambda / s * l.powf(-lambda - 2.0) * (lambda + 1.0 - l);
                Some((-psi1, -psi2))
            }
            Family::ExponentialControl { rate } => Some((-rate, 0.0)),
            Family::GaussianControl { rate } => Some((-2.0 * rate * s, -2.0 * rate)),
            Family::Table { ref points } => {
                let (_, slope) = table_segment(points, s);
                Some((slope, 0.0))
            }
        }
    }
}

fn table_segment(points: &[[f64; 2]], s: f64) -> (usize, f64) {
    let n = points.len();
    let i = match points.iter().position(|p| p[0] > s) {
        Some(0) => 0,
        Some(k) => k - 1,
        None => n - 2,
    }
    .min(n - 2);
    let (s0, b0) = (points[i][0], points[i][1].ln());
    let (s1, b1) = (points[i + 1][0], points[i + 1][1].ln());
    (i, (b1 - b0) / (s1 - s0))
}

fn table_log(points: &[[f64; 2]], s: f64) -> f64 {
    if s <= points[0][0] {
        return points[0][1].ln();
    }
    let (i, slope) = table_segment(points, s);
    points[i][1].ln() + slope * (s - points[i][0])
}

/// A validated profile with its tail start `ρ` and inner value `b(ρ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Family", into = "Family")]
pub struct TailProfile {
    family: Family,
    rho: f64,
    inner_value: f64,
}

impl TryFrom<Family> for TailProfile {
    type Error = Error;
    fn try_from(family: Family) -> Result<Self> {
        build_profile(family)
    }
}

impl From<TailProfile> for Family {
    fn from(p: TailProfile) -> Family {
        p.family
    }
}

/// Validate parameters and locate the tail start `ρ`.
pub fn build_profile(family: Family) -> Result<TailProfile> {
    family.validate()?;
    let rho = locate_tail_start(&family)?;
    let log_inner = family
        .log_formula(rho)
        .ok_or_else(|| Error::ParameterOutOfRange(format!("{}: tail start outside domain", family.name())))?;
    Ok(TailProfile {
        inner_value: log_inner.exp(),
        family,
        rho,
    })
}

fn locate_tail_start(family: &Family) -> Result<f64> {
    if let Family::Table { points } = family {
        return Ok(points[0][0]);
    }
    if matches!(family, Family::ExponentialControl { .. } | Family::GaussianControl { .. }) {
        return Ok(0.0);
    }
    let need_convex = family.is_accelerating();
    let domain_start = match family {
        Family::LogStretched { .. } | Family::AlmostLinear { .. } => 1.0,
        _ => 0.0,
    };
    let holds = |s: f64| -> bool {
        let (Some(lb), Some((d1, d2))) = (family.log_formula(s), family.log_derivatives(s)) else {
            return false;
        };
        d1 < 0.0 && (!need_convex || d2 >= 0.0) && lb <= 0.0
    };
    if domain_start == 0.0 && holds(0.0) {
        // Conditions are monotone in s for every analytic family, so checking
        // the ladder below confirms they hold everywhere.
        let ladder = quad::geometric_ladder(1e-6, 1e15, 600);
        if ladder.iter().all(|&s| holds(s)) {
            return Ok(0.0);
        }
    }
    let lo = if domain_start > 0.0 { domain_start * (1.0 + 1e-9) } else { 1e-9 };
    let ladder = quad::geometric_ladder(lo, 1e15, 2400);
    let last_bad = ladder.iter().rposition(|&s| !holds(s));
    let Some(k) = last_bad else {
        return Ok(lo);
    };
    if k + 1 >= ladder.len() {
        return Err(Error::ParameterOutOfRange(format!(
            "{}: no decreasing tail found below 1e15",
            family.name()
        )));
    }
    // Bisect the bracket [ladder[k], ladder[k+1]].
    let (mut a, mut b) = (ladder[k], ladder[k + 1]);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if holds(mid) {
            b = mid;
        } else {
            a = mid;
        }
        if b - a <= 1e-15 * b {
            break;
        }
    }
    Ok(b)
}

impl TailProfile {
    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn inner_value(&self) -> f64 {
        self.inner_value
    }

    /// `log b(s)`; finite even where `b(s)` underflows.
    pub fn log_eval(&self, s: f64) -> f64 {
        if s <= self.rho {
            self.inner_value.ln()
        } else {
            self.family.log_formula(s).expect("tail formula defined beyond ρ")
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s <= self.rho {
            self.inner_value
        } else {
            self.log_eval(s).exp()
        }
    }

    /// Derivative of `log b` on the tail (zero on `[0, ρ]`).
    pub fn log_slope(&self, s: f64) -> f64 {
        if s <= self.rho {
            0.0
        } else {
            self.family.log_derivatives(s).map(|d| d.0).unwrap_or(0.0)
        }
    }

    /// Returns the profile raised to a power, `b^α`, as a closure-friendly view.
    pub fn powered(&self, alpha: f64) -> PoweredProfile<'_> {
        PoweredProfile { base: self, alpha }
    }

    /// `b⁻¹(level)` on the tail, for `level < b(ρ)`; `log_level` avoids underflow.
    pub fn inverse_log(&self, log_level: f64) -> Result<f64> {
        let top = self.inner_value.ln();
        if !(log_level < top) {
            return Err(Error::LevelAboveRange {
                level: log_level.exp(),
                top: self.inner_value,
            });
        }
        let mut hi = (2.0 * self.rho).max(1.0);
        while self.log_eval(hi) > log_level {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::NoRoot("tail inverse beyond 1e300".into()));
            }
        }
        let lo = self.rho;
        quad::bisect(|s| self.log_eval(s) - log_level, lo, hi, 1e-15)
            .ok_or_else(|| Error::NoRoot("tail inverse bracket".into()))
    }

    pub fn inverse(&self, level: f64) -> Result<f64> {
        self.inverse_log(level.ln())
    }

    /// `∫_x^∞ b(s) s^k ds` for `x ≥ 0`, returned as its logarithm.
    ///
    /// Adaptive quadrature out to a cutoff `R` plus the family's leading-order
    /// remainder; `R` doubles until the remainder is below `1e-8` of the total.
    pub fn log_tail_moment(&self, x: f64, k: u32) -> Result<f64> {
        if let Family::Polynomial { mu, d, .. } = self.family {
            if d as f64 + mu <= k as f64 + 1.0 {
                return Err(Error::DivergentTailIntegral(format!(
                    "polynomial exponent {} ≤ {}",
                    d as f64 + mu,
                    k + 1
                )));
            }
        }
        let kf = k as f64;
        let mut inner = 0.0;
        let start = if x < self.rho {
            inner = self.inner_value * (self.rho.powi(k as i32 + 1) - x.powi(k as i32 + 1)) / (kf + 1.0);
            self.rho
        } else {
            x
        };
        // Scale everything by b(start)·max(start,1)^k to stay in range.
        let log_ref = self.log_eval(start);
        let integrand = |s: f64| (self.log_eval(s) - log_ref).exp() * s.powi(k as i32);
        let char_len = {
            let slope = -(self.log_slope(start) + if start > 0.0 { kf / start } else { 0.0 });
            if slope > 0.0 {
                (1.0 / slope).min(start.max(1.0))
            } else {
                start.max(1.0)
            }
        };
        let mut breaks = vec![start];
        let mut width = char_len;
        let mut total = 0.0;
        let mut cutoff = start;
        loop {
            // Grow panels geometrically, then test the remainder.
            for _ in 0..4 {
                let next = cutoff + width;
                breaks.push(next);
                total += quad::integrate(integrand, cutoff, next, 1e-15 * char_len);
                cutoff = next;
                width *= 2.0;
            }
            let rem = self.scaled_remainder(cutoff, k, log_ref);
            if rem.is_finite() && rem <= 1e-8 * (total + rem) && rem <= 1e-13 * (total + rem).max(1.0) {
                total += rem;
                break;
            }
            if cutoff > 1e200 {
                return Err(Error::DivergentTailIntegral(format!(
                    "{}: remainder does not vanish",
                    self.family.name()
                )));
            }
        }
        let tail = total.ln() + log_ref;
        if inner > 0.0 {
            let big = tail.max(inner.ln());
            Ok(big + ((tail - big).exp() + (inner.ln() - big).exp()).ln())
        } else {
            Ok(tail)
        }
    }

    /// Remainder `∫_R^∞ b(s) s^k ds / exp(log_ref)`.
    fn scaled_remainder(&self, r: f64, k: u32, log_ref: f64) -> f64 {
        let kf = k as f64;
        let scaled_b = (self.log_eval(r) - log_ref).exp();
        match self.family {
            Family::Polynomial { m, mu, d } => {
                let p = d as f64 + mu;
                let lm = m.ln() - log_ref;
                match k {
                    0 => (lm + (1.0 - p) * r.ln_1p()).exp() / (p - 1.0),
                    1 => {
                        (lm + (2.0 - p) * r.ln_1p()).exp() / (p - 2.0)
                            - (lm + (1.0 - p) * r.ln_1p()).exp() / (p - 1.0)
                    }
                    _ => scaled_b * r.powf(kf + 1.0) / (p - kf - 1.0),
                }
            }
            Family::ExponentialControl { rate } => match k {
                0 => scaled_b / rate,
                1 => scaled_b * (r / rate + 1.0 / (rate * rate)),
                _ => laplace_remainder(scaled_b, r, kf, -rate),
            },
            _ => laplace_remainder(scaled_b, r, kf, self.log_slope(r)),
        }
    }
}

fn laplace_remainder(scaled_b: f64, r: f64, k: f64, log_slope: f64) -> f64 {
    let rate = -(log_slope + k / r);
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    scaled_b * r.powf(k) / rate
}

/// `b(s)^α` evaluated in log space.
#[derive(Debug, Clone, Copy)]
pub struct PoweredProfile<'a> {
    base: &'a TailProfile,
    alpha: f64,
}

impl PoweredProfile<'_> {
    pub fn eval(&self, s: f64) -> f64 {
        (self.alpha * self.base.log_eval(s)).exp()
    }
}

/// Surface area of the unit sphere in `ℝ^d` (`d = 1, 2, 3`).
pub fn sphere_surface(dim: u32) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// A normalized radial probability density `a(x) = b(|x|) / Z` on `ℝ^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    profile: TailProfile,
    dim: u32,
    normalizer: f64,
}

/// Build the kernel `b(|x|)/Z`, `Z = |S^{d-1}| ∫₀^∞ b(s) s^{d-1} ds`.
pub fn normalize_kernel(profile: &TailProfile, dim: u32) -> Result<Kernel> {
    if dim != 1 && dim != 2 {
        return Err(Error::ParameterOutOfRange(format!("kernel dimension {dim} not in {{1, 2}}")));
    }
    let radial = profile.log_tail_moment(0.0, dim - 1)?.exp();
    Ok(Kernel {
        profile: profile.clone(),
        dim,
        normalizer: sphere_surface(dim) * radial,
    })
}

impl Kernel {
    pub fn profile(&self) -> &TailProfile {
        &self.profile
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn eval_radial(&self, r: f64) -> f64 {
        self.profile.eval(r) / self.normalizer
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.eval_radial(r)
    }

    /// `∫_{|x| ≥ r} a(x) dx`.
    pub fn radial_tail_mass(&self, r: f64) -> f64 {
        let lt = self
            .profile
            .log_tail_moment(r.max(0.0), self.dim - 1)
            .expect("integrable by construction");
        sphere_surface(self.dim) * lt.exp() / self.normalizer
    }

    /// `∫_s^∞ a(r) dr` for a one-dimensional kernel (one side only).
    pub fn tail_mass_1d(&self, s: f64) -> f64 {
        debug_assert_eq!(self.dim, 1);
        if s < 0.0 {
            return 1.0 - self.tail_mass_1d(-s);
        }
        self.profile.log_tail_moment(s, 0).map(|v| v.exp()).unwrap_or(0.0) / self.normalizer
    }

    /// Independent mass check: panel quadrature at twice the panel density
    /// used for normalization, plus the analytic remainder. Returns `|∫a − 1|`.
    pub fn mass_defect(&self) -> f64 {
        let k = (self.dim - 1) as i32;
        let p = &self.profile;
        let f = |s: f64| p.eval(s) * s.powi(k);
        let mut breaks = vec![0.0];
        if p.rho() > 0.0 {
            breaks.push(p.rho());
        }
        let mut cut = p.rho().max(0.5);
        let mut width = 0.25;
        while cut < 1e9 && (p.log_eval(cut) + (k as f64) * cut.ln() + cut.ln()) > (1e-13f64).ln() {
            breaks.push(cut);
            cut += width;
            width *= 1.41;
        }
        breaks.push(cut);
        let body = quad::integrate_panels(f, &breaks, 1e-14);
        let rem = p.log_tail_moment(cut, k as u32).map(|v| v.exp()).unwrap_or(f64::INFINITY);
        ((body + rem) * sphere_surface(self.dim) / self.normalizer - 1.0).abs()
    }

    /// Largest `ρ₀` with `a(x) ≥ ρ₀` on the ball `B_{ρ₀}(0)`.
    pub fn nondegeneracy_radius(&self) -> f64 {
        let a0 = self.eval_radial(0.0);
        quad::bisect(|r| self.eval_radial(r) - r, 0.0, a0.max(1e-300), 1e-14).unwrap_or(0.0)
    }
}

/// Finite-horizon surrogate for the asymptotic tail classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TailClassReport {
    pub horizon: f64,
    pub tolerance: f64,
    /// `b(S+τ)/b(S) ∈ [1−tol, 1]` for `τ ∈ {1,2,4}` and the unit-shift ratio
    /// nondecreasing along a geometric ladder up to `S`.
    pub long_tailed: bool,
    /// Second divided differences of `log b` on `(ρ, S]` bounded below by `−tol`
    /// (relative to `|log b| / s²`).
    pub log_convex: bool,
    pub integrable_1d: bool,
    pub integrable_2d: bool,
    pub note: &'static str,
}

pub const SURROGATE_NOTE: &str =
    "finite-horizon surrogate: limits replaced by checks on a geometric ladder up to the horizon";

pub fn classify_tail(profile: &TailProfile, horizon: f64, tol: f64) -> Result<TailClassReport> {
    if !(horizon > 2.0 * profile.rho()) {
        return Err(Error::ParameterOutOfRange(format!(
            "horizon {horizon} must exceed 2ρ = {}",
            2.0 * profile.rho()
        )));
    }
    let lb = |s: f64| profile.log_eval(s);

    let shifts_ok = [1.0, 2.0, 4.0].iter().all(|&tau| {
        let ratio = (lb(horizon + tau) - lb(horizon)).exp();
        ratio >= 1.0 - tol && ratio <= 1.0 + 1e-12
    });
    let start = (2.0 * profile.rho()).max(1.0);
    let ladder = quad::geometric_ladder(start, horizon, 64);
    let ratios: Vec<f64> = ladder.iter().map(|&s| lb(s + 1.0) - lb(s)).collect();
    let ladder_ok = ratios.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs().max(1e-12));
    let long_tailed = shifts_ok && ladder_ok;

    let lo = profile.rho().max(1e-3) * (1.0 + 1e-3);
    let grid = quad::geometric_ladder(lo, horizon, 400);
    let f: Vec<f64> = grid.iter().map(|&s| lb(s)).collect();
    let log_convex = (1..grid.len() - 1).all(|i| {
        let (s0, s1, s2) = (grid[i - 1], grid[i], grid[i + 1]);
        let d = 2.0 * ((f[i + 1] - f[i]) / (s2 - s1) - (f[i] - f[i - 1]) / (s1 - s0)) / (s2 - s0);
        d * s1 * s1 >= -tol * f[i].abs().max(1.0)
    });

    let integrable = |dim: u32| profile.log_tail_moment(0.0, dim - 1).is_ok();
    Ok(TailClassReport {
        horizon,
        tolerance: tol,
        long_tailed,
        log_convex,
        integrable_1d: integrable(1),
        integrable_2d: integrable(2),
        note: SURROGATE_NOTE,
    })
}

/// Finite-horizon log-equivalence: the deviation `|log b₁/log b₂ − 1|` must be
/// at most `tol` at the horizon and must not grow along the ladder
/// `[S/100, S]` leading up to it.
pub fn log_equivalent(p1: &TailProfile, p2: &TailProfile, horizon: f64, tol: f64) -> bool {
    let floor = 2.0 * p1.rho().max(p2.rho()) + 1.0;
    let lo = (horizon / 100.0).max(floor);
    if !(horizon > lo) {
        return false;
    }
    let dev = |s: f64| {
        let (l1, l2) = (p1.log_eval(s), p2.log_eval(s));
        if l2 == 0.0 {
            return f64::INFINITY;
        }
        (l1 / l2 - 1.0).abs()
    };
    let ladder = quad::geometric_ladder(lo, horizon, 12);
    let devs: Vec<f64> = ladder.iter().map(|&s| dev(s)).collect();
    let trend_ok = devs.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    devs.last().is_some_and(|&d| d <= tol) && trend_ok
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(m: f64, mu: f64, d: u32) -> TailProfile {
        build_profile(Family::Polynomial { m, mu, d }).unwrap()
    }

    fn stretched(c: f64, gamma: f64, nu: f64) -> TailProfile {
        build_profile(Family::StretchedExp { scale: 1.0, c, gamma, nu }).unwrap()
    }

    #[test]
    fn polynomial_profile_starts_at_zero() {
        let p = poly(1.0, 1.0, 1);
        assert_eq!(p.rho(), 0.0);
        assert!((p.eval(1.0) - 0.25).abs() < 1e-15);
        assert!((p.eval(3.0) - 1.0 / 16.0).abs() < 1e-15);
        // M > 1 pushes the tail start to where b = 1.
        let p = poly(4.0, 0.0, 2);
        assert!((p.rho() - 1.0).abs() < 1e-12);
        assert!((p.inner_value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stretched_exp_value() {
        let p = stretched(1.0, 0.5, 0.0);
        assert!((p.eval(4.0) - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn controls_start_at_one() {
        let e = build_profile(Family::ExponentialControl { rate: 1.0 }).unwrap();
        assert_eq!(e.eval(0.0), 1.0);
        let g = build_profile(Family::GaussianControl { rate: 1.0 }).unwrap();
        assert_eq!(g.eval(0.0), 1.0);
    }

    #[test]
    fn weibull_type_with_singular_formula_gets_a_cap() {
        let p = build_profile(Family::StretchedExp {
            scale: 1.0 / PI,
            c: 1.0,
            gamma: 0.5,
            nu: -1.5,
        })
        .unwrap();
        assert!(p.rho() > 0.0);
        assert!((p.inner_value() - 1.0).abs() < 1e-9);
        assert!(p.eval(0.0) <= 1.0);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(matches!(
            build_profile(Family::StretchedExp { scale: 1.0, c: 1.0, gamma: 1.5, nu: 0.0 }),
            Err(Error::ParameterOutOfRange(_))
        ));
        assert!(build_profile(Family::AlmostLinear { lambda: 1.0 }).is_err());
        assert!(build_profile(Family::Polynomial { m: 1.0, mu: -1.0, d: 1 }).is_err());
        assert!(build_profile(Family::ExponentialControl { rate: 0.0 }).is_err());
        assert!(build_profile(Family::Table { points: vec![[0.0, 1.0], [1.0, 2.0]] }).is_err());
    }

    #[test]
    fn normalization_of_simple_kernels() {
        let k = normalize_kernel(&poly(1.0, 1.0, 1), 1).unwrap();
        assert!((k.normalizer() - 2.0).abs() < 1e-10);
        let e = build_profile(Family::ExponentialControl { rate: 1.0 }).unwrap();
        let k = normalize_kernel(&e, 1).unwrap();
        assert!((k.normalizer() - 2.0).abs() < 1e-12);
        // ∫ e^{-s} s ds · 2π = 2π
        let k = normalize_kernel(&e, 2).unwrap();
        assert!((k.normalizer() - 2.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn harmonic_tail_diverges() {
        let p = poly(1.0, 0.0, 1);
        assert!(matches!(normalize_kernel(&p, 1), Err(Error::DivergentTailIntegral(_))));
        // Exponent 2 is integrable in d = 1 but not in d = 2.
        assert!(normalize_kernel(&poly(1.0, 1.0, 1), 2).is_err());
    }

    #[test]
    fn inverse_round_trips() {
        let p = stretched(1.0, 0.5, 0.0);
        let s = p.inverse((-9.0f64).exp()).unwrap();
        assert!((s - 81.0).abs() < 1e-9);
        assert!(matches!(p.inverse(2.0), Err(Error::LevelAboveRange { .. })));
        // Deep tail without underflow.
        let s = p.inverse_log(-1000.0).unwrap();
        assert!((s - 1e6).abs() / 1e6 < 1e-12);
    }

    #[test]
    fn classification_of_controls() {
        let e = build_profile(Family::ExponentialControl { rate: 1.0 }).unwrap();
        let r = classify_tail(&e, 1e6, 1e-2).unwrap();
        assert!(!r.long_tailed);
        let g = build_profile(Family::GaussianControl { rate: 1.0 }).unwrap();
        let r = classify_tail(&g, 1e3, 1e-2).unwrap();
        assert!(!r.log_convex);
        assert!(!r.long_tailed);
        let r = classify_tail(&poly(1.0, 1.0, 1), 1e6, 1e-2).unwrap();
        assert!(r.long_tailed && r.log_convex && r.integrable_1d && !r.integrable_2d);
        assert!(classify_tail(&poly(4.0, 0.0, 2), 1.5, 1e-2).is_err());
    }

    #[test]
    fn log_equivalence_examples() {
        let b = poly(1.0, 1.0, 1);
        let b2 = poly(2.0, 1.0, 1);
        assert!(log_equivalent(&b, &b, 1e6, 1e-12));
        assert!(log_equivalent(&b, &b2, 1e6, 0.03));
        let s = stretched(1.0, 0.5, 0.0);
        assert!(!log_equivalent(&s, &b, 1e6, 0.03));
    }

    #[test]
    fn table_profile_extrapolates() {
        let t = build_profile(Family::Table {
            points: vec![[0.0, 1.0], [1.0, 0.5], [2.0, 0.125]],
        })
        .unwrap();
        assert!((t.eval(0.5) - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((t.eval(3.0) - 0.125 / 4.0).abs() < 1e-12);
        let k = normalize_kernel(&t, 1).unwrap();
        assert!(k.mass_defect() < 1e-8);
    }

    #[test]
    fn serde_round_trip_rebuilds_tail_start() {
        let p = build_profile(Family::AlmostLinear { lambda: 2.0 }).unwrap();
        let text = toml::to_string(&p).unwrap();
        let back: TailProfile = toml::from_str(&text).unwrap();
        assert_eq!(back, p);
        let bad: std::result::Result<TailProfile, _> = toml::from_str("family = \"almost-linear\"\nlambda = 0.5\n");
        assert!(bad.is_err());
    }
}
