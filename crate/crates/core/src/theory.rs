//! Numeric certificates for the comparison scaffolding: sub-solution
//! residuals, clipped-weight convolution ratios, level-set inclusions and
//! the long-tail lower bound for convolutions.
//!
//! Convolutions here are evaluated by adaptive quadrature on the real line
//! rather than on a truncated grid, so the certificates do not depend on the
//! exterior model. Only `d = 1` is supported for those; [`liminf_ratio`]
//! works on grid data in either dimension.

use crate::error::{Error, Result};
use crate::front::{LevelSetSpec, LevelShape};
use crate::grid::Field;
use crate::quad;
use crate::reaction::ReactionSpec;
use crate::tailprofiles::{Kernel, TailProfile};

const QUAD_TOL: f64 = 1e-13;

/// `∫ a(y) φ(x − y) dy` for a one-dimensional kernel, splitting the line at
/// the kinks of both factors.
fn convolve_1d<F: Fn(f64) -> f64>(kernel: &Kernel, phi: F, x: f64, phi_kinks: &[f64], scale: f64) -> f64 {
    let rho = kernel.profile().rho();
    let mut breaks = vec![0.0, rho, -rho];
    for &k in phi_kinks {
        breaks.push(x - k);
        breaks.push(x + k);
    }
    breaks.retain(|b| b.is_finite());
    // Geometric panels around every kink so no panel hides a narrow peak.
    let reach = breaks.iter().fold(1.0f64, |m, b| m.max(b.abs()));
    let centers = breaks.clone();
    for c in centers {
        let mut r = 0.25;
        while r < 2.0 * reach {
            breaks.push(c + r);
            breaks.push(c - r);
            r *= 2.0;
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    let lo = *breaks.first().unwrap() - 1.0;
    let hi = *breaks.last().unwrap() + 1.0;
    breaks.insert(0, lo);
    breaks.push(hi);
    let f = |y: f64| kernel.eval_radial(y.abs()) * phi(x - y);
    let tol = QUAD_TOL * scale;
    let body = quad::integrate_panels(f, &breaks, tol);
    let tail_scale = hi.abs().max(lo.abs()).max(1.0);
    let right = quad::integrate_to_infinity(f, hi, tail_scale, tol);
    let left = quad::integrate_to_infinity(|s| f(-s), -lo, tail_scale, tol);
    body + right + left
}

/// Parameters of the time-averaged, clipped sub-solution
/// `v(x,t) = σ⁻¹ ∫_t^{t+σ} λ min{1, c(x) e^{β(1−ε)s}} ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsolutionSpec {
    pub level_spec: LevelSetSpec,
    pub eps: f64,
    pub lam: f64,
    pub sigma: f64,
    pub delta: f64,
}

impl SubsolutionSpec {
    /// `delta` defaults to `εβ/4`.
    pub fn new(level_spec: LevelSetSpec, eps: f64, lam: f64, sigma: f64, delta: Option<f64>) -> Result<Self> {
        if level_spec.dim != 1 || level_spec.shape != LevelShape::Radial {
            return Err(Error::ParameterOutOfRange(
                "sub-solution certificates need a radial profile in d = 1".into(),
            ));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::ParameterOutOfRange(format!("ε = {eps} must lie in (0, 1)")));
        }
        if !(lam >= 0.0 && lam.is_finite()) {
            return Err(Error::ParameterOutOfRange(format!("λ = {lam} must be nonnegative")));
        }
        if !(sigma > 0.0) {
            return Err(Error::ParameterOutOfRange(format!("σ = {sigma} must be positive")));
        }
        let beta = level_spec.beta;
        let delta = delta.unwrap_or(0.25 * eps * beta);
        if !(delta > 0.0 && delta < eps * beta) {
            return Err(Error::ParameterOutOfRange(format!(
                "δ = {delta} must lie in (0, εβ = {})",
                eps * beta
            )));
        }
        Ok(SubsolutionSpec {
            level_spec,
            eps,
            lam,
            sigma,
            delta,
        })
    }

    fn rate(&self) -> f64 {
        self.level_spec.beta * (1.0 - self.eps)
    }

    /// `g(x,t) = λ min{1, c(x) e^{β(1−ε)t}}`.
    pub fn g(&self, x: f64, t: f64) -> f64 {
        let e = self.level_spec.log_c(x.abs()) + self.rate() * t;
        self.lam * e.min(0.0).exp()
    }

    /// The time average `v(x,t)` in closed form.
    pub fn v(&self, x: f64, t: f64) -> f64 {
        let lc = self.level_spec.log_c(x.abs());
        let a = self.rate();
        let (t0, t1) = (t, t + self.sigma);
        // g saturates from s* on.
        let s_star = -lc / a;
        let mut total = 0.0;
        if t0 < s_star {
            let end = t1.min(s_star);
            total += ((lc + a * end).exp() - (lc + a * t0).exp()) / a;
        }
        if t1 > s_star {
            total += t1 - t0.max(s_star);
        }
        self.lam * total / self.sigma
    }

    /// Radius where `g(·, t)` stops being clipped, `η((1−ε)t)`.
    fn clip_radius(&self, t: f64) -> Option<f64> {
        self.level_spec.profile.inverse_log(-self.rate() * t).ok()
    }

    /// Pointwise residual `∂ₜv − κ a∗v + (m+δ) v` for the linear operator.
    pub fn residual_at(&self, kernel: &Kernel, kappa: f64, m: f64, x: f64, t: f64) -> f64 {
        if self.lam == 0.0 {
            return 0.0;
        }
        let dv = (self.g(x, t + self.sigma) - self.g(x, t)) / self.sigma;
        let mut kinks = vec![0.0, self.level_spec.profile.rho()];
        kinks.extend(self.clip_radius(t));
        kinks.extend(self.clip_radius(t + self.sigma));
        let conv = convolve_1d(kernel, |z| self.v(z, t), x, &kinks, self.lam);
        dv - kappa * conv + (m + self.delta) * self.v(x, t)
    }

    /// Evaluation points around the clipped front at time `t`: a dense band
    /// around `η((1−ε)t)` plus a geometric ladder far beyond it.
    pub fn probe_points(&self, t: f64, count: usize) -> Vec<f64> {
        let r = self.clip_radius(t + self.sigma).unwrap_or(1.0).max(1.0);
        let count = count.max(8);
        let mut xs: Vec<f64> = (0..count / 2).map(|i| 2.0 * r * i as f64 / (count / 2) as f64).collect();
        xs.extend(quad::geometric_ladder(2.0 * r, 1e3 * r, count - count / 2));
        xs
    }
}

/// Largest residual of the linear sub-solution inequality over `xs × times`.
/// A certified sub-solution returns a value `≤ 0` (up to quadrature noise).
pub fn subsolution_residual(spec: &SubsolutionSpec, kernel: &Kernel, kappa: f64, m: f64, xs: &[f64], times: &[f64]) -> f64 {
    if spec.lam == 0.0 {
        return 0.0;
    }
    let mut worst = f64::NEG_INFINITY;
    for &t in times {
        for &x in xs {
            worst = worst.max(spec.residual_at(kernel, kappa, m, x, t));
        }
    }
    worst
}

/// Burn-in `τ₀`: scans `t_start, t_start + step, ...` and returns the first
/// time whose maximum residual over [`SubsolutionSpec::probe_points`] is
/// nonpositive and no longer drops by more than 1% relative to the previous
/// one, together with that residual.
pub fn find_tau0(
    spec: &SubsolutionSpec,
    kernel: &Kernel,
    kappa: f64,
    m: f64,
    t_start: f64,
    step: f64,
    max_steps: usize,
) -> Result<(f64, f64)> {
    let mut prev: Option<f64> = None;
    for k in 0..max_steps {
        let t = t_start + step * k as f64;
        let xs = spec.probe_points(t, 64);
        let r = subsolution_residual(spec, kernel, kappa, m, &xs, &[t]);
        if let Some(p) = prev {
            if r <= 0.0 && p - r <= 0.01 * p.abs() {
                return Ok((t, r));
            }
        }
        prev = Some(r);
    }
    Err(Error::NoRoot(format!(
        "sub-solution residual still changing after t = {}",
        t_start + step * max_steps as f64
    )))
}

/// Largest `r ∈ [0, θ]` with `G(r'·1) < δ` for every `r' ≤ r`.
pub fn lambda0(reaction: &ReactionSpec, delta: f64) -> f64 {
    let theta = reaction.theta();
    let scan = 2000;
    let mut last_ok = 0.0;
    for i in 1..=scan {
        let r = theta * i as f64 / scan as f64;
        if reaction.g_constant(r) >= delta {
            return quad::bisect(|s| reaction.g_constant(s) - delta, last_ok, r, 1e-12).unwrap_or(last_ok);
        }
        last_ok = r;
    }
    theta
}

/// `max_x (a∗ω_λ)(x) / ω_λ(x)` over `xs`, with `ω_λ = min{λ, b(|x|)^α}`.
pub fn supersolution_ratio(kernel: &Kernel, weight: &TailProfile, alpha: f64, lam: f64, xs: &[f64]) -> Result<f64> {
    if kernel.dim() != 1 {
        return Err(Error::ParameterOutOfRange("quadrature ratio needs d = 1".into()));
    }
    if !(lam > 0.0 && alpha > 0.0) {
        return Err(Error::ParameterOutOfRange("λ and α must be positive".into()));
    }
    let log_lam = lam.ln();
    let omega = |z: f64| (alpha * weight.log_eval(z.abs())).min(log_lam).exp();
    let mut kinks = vec![0.0, weight.rho()];
    kinks.extend(weight.inverse_log(log_lam / alpha).ok());
    let mut worst: f64 = 0.0;
    for &x in xs {
        let w = omega(x);
        let conv = convolve_1d(kernel, omega, x, &kinks, w);
        worst = worst.max(conv / w);
    }
    Ok(worst)
}

/// `f(α) = α − √(α(1−α))`.
pub fn inclusion_f(alpha: f64) -> f64 {
    alpha - (alpha * (1.0 - alpha)).sqrt()
}

/// `g(α) = √α / (√α + √(1−α))`.
pub fn inclusion_g(alpha: f64) -> f64 {
    let s = alpha.sqrt();
    s / (s + (1.0 - alpha).sqrt())
}

/// `h(ε) = (1 + ε/2) / (1 + ε)`.
pub fn inclusion_h(eps: f64) -> f64 {
    (1.0 + 0.5 * eps) / (1.0 + eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelInclusion {
    /// Root of `g(α₁) = α₀`.
    pub alpha1: f64,
    /// `h⁻¹(α₁)`.
    pub eps0: f64,
    /// Root of `f(α) = h(ε)` in `(α₁, 1)`.
    pub alpha: f64,
    pub root_residual: f64,
    pub times: [f64; 3],
    /// Radii of `Λ(s + εs/2, c_α)` and `Λ(s + εs, c)` for `s ∈ {t, 2t, 4t}`.
    pub radii: [(f64, f64); 3],
    pub holds: [bool; 3],
}

impl LevelInclusion {
    pub fn passed(&self) -> bool {
        self.holds.iter().all(|&h| h)
    }
}

/// Solves for `α(ε)` and compares the radial level sets of `c_α = b^α` and
/// `c = b` at `t`, `2t` and `4t`.
pub fn check_level_inclusion(profile: &TailProfile, beta: f64, eps: f64, alpha0: f64, t: f64) -> Result<LevelInclusion> {
    if !(alpha0 > 0.75 && alpha0 < 1.0) {
        return Err(Error::ParameterOutOfRange(format!("α₀ = {alpha0} must lie in (3/4, 1)")));
    }
    let alpha1 = quad::bisect(|a| inclusion_g(a) - alpha0, 0.5, 1.0, 1e-15)
        .ok_or_else(|| Error::NoRoot("g(α₁) = α₀".into()))?;
    let eps0 = (1.0 - alpha1) / (alpha1 - 0.5);
    if !(eps > 0.0 && eps < eps0) {
        return Err(Error::NoRoot(format!("ε = {eps} outside (0, ε₀ = {eps0})")));
    }
    let target = inclusion_h(eps);
    let alpha = quad::bisect(|a| inclusion_f(a) - target, alpha1, 1.0, 1e-16)
        .ok_or_else(|| Error::NoRoot("f(α) = h(ε)".into()))?;
    let root_residual = (inclusion_f(alpha) - target).abs();
    let times = [t, 2.0 * t, 4.0 * t];
    let mut radii = [(0.0, 0.0); 3];
    let mut holds = [false; 3];
    for (i, &s) in times.iter().enumerate() {
        // b^α ≥ e^{−βτ} ⇔ b ≥ e^{−βτ/α}.
        let inner = profile.inverse_log(-beta * (s + 0.5 * eps * s) / alpha)?;
        let outer = profile.inverse_log(-beta * (s + eps * s))?;
        radii[i] = (inner, outer);
        holds[i] = inner <= outer;
    }
    Ok(LevelInclusion {
        alpha1,
        eps0,
        alpha,
        root_residual,
        times,
        radii,
        holds,
    })
}

/// `min (c∗f)(x) / c(x)` over `|x| ∈ radii`, with `c = b(|x|)` and the
/// convolution summed over the nodes of `f`. In `d = 2` each radius is
/// probed along eight directions.
pub fn liminf_ratio(c: &TailProfile, f: &Field, radii: &[f64]) -> f64 {
    let grid = f.grid();
    let vol = grid.cell_volume();
    let support: Vec<([f64; 2], f64)> = f
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &v)| (grid.point(i), v))
        .collect();
    let directions: Vec<[f64; 2]> = if grid.dim() == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..8)
            .map(|k| {
                let a = std::f64::consts::FRAC_PI_4 * k as f64;
                [a.cos(), a.sin()]
            })
            .collect()
    };
    let mut worst = f64::INFINITY;
    for &r in radii {
        for d in &directions {
            let x = [r * d[0], r * d[1]];
            let lc = c.log_eval(r);
            let conv: f64 = support
                .iter()
                .map(|(p, v)| {
                    let dist = ((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)).sqrt();
                    v * (c.log_eval(dist) - lc).exp()
                })
                .sum();
            worst = worst.min(vol * conv);
        }
    }
    worst
}
