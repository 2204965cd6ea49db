//! The reaction `F(u) = α f(u) + (1−α)(β/θ^k) u (θ − a⁻∗u)^k` and the
//! competition map `G(u) = β − F(u)/u` (with `G = 0` where `u = 0`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Exterior, Field, Grid, KernelOperator};
use crate::quad;
use crate::tailprofiles::Kernel;

/// Values this far outside `[0, θ]` are clamped instead of rejected.
pub const TUBE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalTerm {
    /// `f(r) = ν r (θ − r)`, `ν = β/θ`.
    Fisher,
    /// `f(r) = ν r (θ − r)²`, `ν = β/θ²`.
    Kpp,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionSpec {
    alpha: f64,
    k: u32,
    local: LocalTerm,
    theta: f64,
    beta: f64,
    comp_kernel: Option<Kernel>,
    nu_scale: f64,
}

impl ReactionSpec {
    /// `comp_kernel` (the kernel `a⁻`) is required whenever `α < 1`.
    pub fn new(
        alpha: f64,
        k: u32,
        local: LocalTerm,
        theta: f64,
        beta: f64,
        comp_kernel: Option<Kernel>,
    ) -> Result<Self> {
        let bad = |s: &str| Err(Error::ParameterOutOfRange(format!("reaction: {s}")));
        if !(0.0..=1.0).contains(&alpha) {
            return bad("α must lie in [0, 1]");
        }
        if k == 0 {
            return bad("k must be a positive integer");
        }
        if !(theta > 0.0 && theta.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
            return bad("θ and β must be positive");
        }
        if alpha > 0.0 && local == LocalTerm::None {
            return bad("α > 0 needs a local term");
        }
        if alpha < 1.0 && comp_kernel.is_none() {
            return bad("α < 1 needs a competition kernel");
        }
        Ok(ReactionSpec {
            alpha,
            k,
            local,
            theta,
            beta,
            comp_kernel: if alpha < 1.0 { comp_kernel } else { None },
            nu_scale: 1.0,
        })
    }

    /// Pure local Fisher reaction, `α = 1`.
    pub fn fisher(theta: f64, beta: f64) -> Self {
        ReactionSpec::new(1.0, 1, LocalTerm::Fisher, theta, beta, None).expect("valid Fisher reaction")
    }

    /// Multiplies `ν_f` by `scale`. Anything but 1 breaks `f'(0) = β`; meant
    /// for exercising the condition checks.
    pub fn with_nu_scale(mut self, scale: f64) -> Self {
        self.nu_scale = scale;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn local(&self) -> LocalTerm {
        self.local
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn nu_scale(&self) -> f64 {
        self.nu_scale
    }

    pub fn comp_kernel(&self) -> Option<&Kernel> {
        self.comp_kernel.as_ref()
    }

    pub fn is_local(&self) -> bool {
        self.alpha == 1.0
    }

    pub fn nu_f(&self) -> f64 {
        self.nu_scale
            * match self.local {
                LocalTerm::Fisher => self.beta / self.theta,
                LocalTerm::Kpp => self.beta / (self.theta * self.theta),
                LocalTerm::None => 0.0,
            }
    }

    /// `f(r)/r`, continuous at `r = 0`.
    pub fn f_over_r(&self, r: f64) -> f64 {
        let d = self.theta - r;
        match self.local {
            LocalTerm::Fisher => self.nu_f() * d,
            LocalTerm::Kpp => self.nu_f() * d * d,
            LocalTerm::None => 0.0,
        }
    }

    pub fn f(&self, r: f64) -> f64 {
        r * self.f_over_r(r)
    }

    /// Lipschitz constant of `r ↦ f(r)/r` on `[0, θ]`.
    pub fn lipschitz_k(&self) -> f64 {
        match self.local {
            LocalTerm::Fisher => self.nu_f(),
            LocalTerm::Kpp => 2.0 * self.nu_f() * self.theta,
            LocalTerm::None => 0.0,
        }
    }

    /// Bound on `θ·Lip(G)`: `αKθ + (1−α)βk`.
    pub fn lipschitz_g_theta(&self) -> f64 {
        self.alpha * self.lipschitz_k() * self.theta + (1.0 - self.alpha) * self.beta * self.k as f64
    }

    /// Quasi-monotonicity constant `p = β + αθK`.
    pub fn quasi_monotonicity_p(&self) -> f64 {
        self.beta + self.alpha * self.theta * self.lipschitz_k()
    }

    /// Pointwise `F` given `u` and the competition average `a⁻∗u`.
    pub fn f_pointwise(&self, u: f64, avg: f64) -> f64 {
        let nonlocal = if self.alpha < 1.0 {
            let gap = (self.theta - avg).max(0.0);
            (1.0 - self.alpha) * self.beta / self.theta.powi(self.k as i32) * u * gap.powi(self.k as i32)
        } else {
            0.0
        };
        self.alpha * self.f(u) + nonlocal
    }

    /// Pointwise `G`, zero at `u = 0`.
    pub fn g_pointwise(&self, u: f64, avg: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        let nonlocal = if self.alpha < 1.0 {
            let ratio = ((self.theta - avg) / self.theta).max(0.0);
            (1.0 - self.alpha) * self.beta * ratio.powi(self.k as i32)
        } else {
            0.0
        };
        self.beta - self.alpha * self.f_over_r(u) - nonlocal
    }

    /// Constant-state `G(r·1)`, where `a⁻∗r = r`.
    pub fn g_constant(&self, r: f64) -> f64 {
        self.g_pointwise(r, r)
    }
}

/// `F` and `G` on grid fields, with the competition convolution prepared
/// once for a grid and exterior.
#[derive(Debug)]
pub struct ReactionOperator {
    spec: ReactionSpec,
    comp: Option<KernelOperator>,
    avg: Vec<f64>,
    clamped: Vec<f64>,
}

impl ReactionOperator {
    pub fn new(spec: &ReactionSpec, grid: &Grid, exterior: Exterior) -> Result<Self> {
        let comp = match &spec.comp_kernel {
            Some(k) => Some(KernelOperator::new(k, grid, exterior)?),
            None => None,
        };
        Ok(ReactionOperator {
            spec: spec.clone(),
            comp,
            avg: vec![0.0; grid.len()],
            clamped: vec![0.0; grid.len()],
        })
    }

    pub fn spec(&self) -> &ReactionSpec {
        &self.spec
    }

    fn prepare(&mut self, u: &[f64]) -> Result<()> {
        let theta = self.spec.theta;
        for (i, (c, &v)) in self.clamped.iter_mut().zip(u).enumerate() {
            if !(v >= -TUBE_TOL && v <= theta + TUBE_TOL) {
                return Err(Error::OutOfTube { index: i, value: v, theta });
            }
            *c = v.clamp(0.0, theta);
        }
        if let Some(op) = self.comp.as_mut() {
            op.apply_into(&self.clamped, &mut self.avg);
        }
        Ok(())
    }

    pub fn apply_f_into(&mut self, u: &[f64], out: &mut [f64]) -> Result<()> {
        self.prepare(u)?;
        for ((o, &v), &a) in out.iter_mut().zip(&self.clamped).zip(&self.avg) {
            *o = self.spec.f_pointwise(v, a);
        }
        Ok(())
    }

    pub fn apply_g_into(&mut self, u: &[f64], out: &mut [f64]) -> Result<()> {
        self.prepare(u)?;
        for ((o, &v), &a) in out.iter_mut().zip(&self.clamped).zip(&self.avg) {
            *o = self.spec.g_pointwise(v, a);
        }
        Ok(())
    }

    /// `u·G(u)` (equivalently `βu − F(u)`), with the same clamping.
    pub fn apply_ug_into(&mut self, u: &[f64], out: &mut [f64]) -> Result<()> {
        self.prepare(u)?;
        for ((o, &v), &a) in out.iter_mut().zip(&self.clamped).zip(&self.avg) {
            *o = v * self.spec.g_pointwise(v, a);
        }
        Ok(())
    }
}

#[allow(non_snake_case)]
pub fn apply_F(spec: &ReactionSpec, u: &Field, exterior: Exterior) -> Result<Field> {
    let mut op = ReactionOperator::new(spec, u.grid(), exterior)?;
    let mut out = vec![0.0; u.values().len()];
    op.apply_f_into(u.values(), &mut out)?;
    Field::from_values(*u.grid(), out)
}

#[allow(non_snake_case)]
pub fn apply_G(spec: &ReactionSpec, u: &Field, exterior: Exterior) -> Result<Field> {
    let mut op = ReactionOperator::new(spec, u.grid(), exterior)?;
    let mut out = vec![0.0; u.values().len()];
    op.apply_g_into(u.values(), &mut out)?;
    Field::from_values(*u.grid(), out)
}

/// Hypotheses that only enter existence arguments and have no computable check.
pub const UNTESTED_HYPOTHESES: [&str; 2] = [
    "smooth minorant of the kernel used by the hair-trigger argument",
    "approximating sequence of reactions",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionReport {
    /// Largest difference quotient of `f(r)/r` over the sample.
    pub lipschitz_k: f64,
    pub endpoint_zeros: bool,
    /// `0 ≤ f(r) ≤ βr` and `0 ≤ F(r·1) ≤ βr` on the sample.
    pub bounded_by_beta_r: bool,
    /// Worst `f(r) − βr` (or `F − βr`) over the sample; positive means violated.
    pub worst_bound_excess: f64,
    /// `f(r)/r → β` as `r → 0+`.
    pub linearization_ok: bool,
    /// `G(r·1) < β` on `(0, θ)`.
    pub strict_g_below_beta: bool,
    pub p: f64,
    pub untested: Vec<&'static str>,
}

impl ReactionReport {
    pub fn passed(&self) -> bool {
        self.lipschitz_k.is_finite()
            && self.endpoint_zeros
            && self.bounded_by_beta_r
            && self.linearization_ok
            && self.strict_g_below_beta
    }
}

pub fn check_reaction_conditions(spec: &ReactionSpec, rs: &[f64]) -> ReactionReport {
    let theta = spec.theta;
    let beta = spec.beta;
    let mut sample: Vec<f64> = rs.iter().copied().filter(|r| (0.0..=theta).contains(r)).collect();
    sample.sort_by(f64::total_cmp);
    sample.dedup();

    let mut k_est: f64 = 0.0;
    for w in sample.windows(2) {
        let q = (spec.f_over_r(w[1]) - spec.f_over_r(w[0])).abs() / (w[1] - w[0]);
        k_est = k_est.max(q);
    }
    let uses_local = spec.alpha > 0.0;
    let endpoint_zeros = spec.f(0.0) == 0.0
        && spec.f(theta) == 0.0
        && spec.f_pointwise(0.0, 0.0) == 0.0
        && spec.f_pointwise(theta, theta) == 0.0;
    let mut worst = f64::NEG_INFINITY;
    let mut nonneg = true;
    for &r in &sample {
        let fr = if uses_local { spec.f(r) } else { 0.0 };
        let big_f = spec.f_pointwise(r, r);
        nonneg &= fr >= 0.0 && big_f >= 0.0;
        worst = worst.max(fr - beta * r).max(big_f - beta * r);
    }
    let bounded = nonneg && worst <= 1e-12 * beta * theta;
    let linearization_ok = !uses_local || (spec.f_over_r(0.0) - beta).abs() <= 1e-12 * beta;
    let strict = [0.1, 0.5, 0.9].iter().all(|&s| spec.g_constant(s * theta) < beta);
    ReactionReport {
        lipschitz_k: k_est,
        endpoint_zeros,
        bounded_by_beta_r: bounded,
        worst_bound_excess: worst,
        linearization_ok,
        strict_g_below_beta: strict,
        p: beta + spec.alpha * theta * k_est,
        untested: UNTESTED_HYPOTHESES.to_vec(),
    }
}

/// Scans `ϱ` for `κ a(x) ≥ (1−α) k β a⁻(x) + ϱ 1_{|x| < ϱ}` at the grid
/// nodes and returns the largest admissible `ϱ` found, if any.
pub fn check_kernel_domination(spec: &ReactionSpec, kernel: &Kernel, kappa: f64, grid: &Grid) -> Option<f64> {
    let weight = (1.0 - spec.alpha) * spec.k as f64 * spec.beta;
    let radii: Vec<f64> = (0..grid.len())
        .map(|k| {
            let p = grid.point(k);
            (p[0] * p[0] + p[1] * p[1]).sqrt()
        })
        .collect();
    let slack: Vec<f64> = radii
        .iter()
        .map(|&r| {
            let minus = match (&spec.comp_kernel, weight > 0.0) {
                (Some(k), true) => weight * k.eval_radial(r),
                _ => 0.0,
            };
            kappa * kernel.eval_radial(r) - minus
        })
        .collect();
    if slack.iter().any(|&s| s < 0.0) {
        return None;
    }
    let top = slack
        .iter()
        .zip(&radii)
        .filter(|(_, &r)| r == 0.0)
        .map(|(s, _)| *s)
        .fold(kappa * kernel.eval_radial(0.0), f64::min);
    let ok = |rho: f64| {
        slack
            .iter()
            .zip(&radii)
            .all(|(&s, &r)| r >= rho || s >= rho)
    };
    let candidates = quad::geometric_ladder(top.max(1e-300) * 1e-9, top.max(1e-300), 400);
    candidates.into_iter().rev().find(|&rho| ok(rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::tailprofiles::{build_profile, normalize_kernel, Family};

    fn exp_kernel(dim: u32, rate: f64) -> Kernel {
        normalize_kernel(&build_profile(Family::ExponentialControl { rate }).unwrap(), dim).unwrap()
    }

    #[test]
    fn constants_and_endpoints() {
        let g = make_grid(1, 10.0, 32).unwrap();
        let theta = 2.0;
        let spec = ReactionSpec::new(0.4, 2, LocalTerm::Fisher, theta, 1.0, Some(exp_kernel(1, 1.0))).unwrap();
        let zero = apply_F(&spec, &Field::zeros(g), Exterior::Zero).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let full = apply_F(&spec, &Field::constant(g, theta), Exterior::Constant(theta)).unwrap();
        assert!(full.values().iter().all(|&v| v == 0.0));
        let gz = apply_G(&spec, &Field::zeros(g), Exterior::Zero).unwrap();
        assert!(gz.values().iter().all(|&v| v == 0.0));
        let gt = apply_G(&spec, &Field::constant(g, theta), Exterior::Constant(theta)).unwrap();
        assert!(gt.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn half_theta_values() {
        let g = make_grid(1, 10.0, 32).unwrap();
        let (theta, beta) = (2.0, 1.5);
        let half = Field::constant(g, theta / 2.0);
        let local = ReactionSpec::fisher(theta, beta);
        let f = apply_F(&local, &half, Exterior::Constant(1.0)).unwrap();
        assert!(f.values().iter().all(|&v| (v - beta * theta / 4.0).abs() < 1e-14));
        let gg = apply_G(&local, &half, Exterior::Constant(1.0)).unwrap();
        assert!(gg.values().iter().all(|&v| (v - beta / 2.0).abs() < 1e-14));
        let nonlocal = ReactionSpec::new(0.0, 1, LocalTerm::None, theta, beta, Some(exp_kernel(1, 1.0))).unwrap();
        let f = apply_F(&nonlocal, &half, Exterior::Constant(1.0)).unwrap();
        assert!(f.values().iter().all(|&v| (v - beta * theta / 4.0).abs() < 1e-14));
    }

    #[test]
    fn out_of_tube_is_rejected_and_undershoot_clamped() {
        let g = make_grid(1, 10.0, 16).unwrap();
        let spec = ReactionSpec::fisher(1.0, 1.0);
        let mut v = vec![0.5; 16];
        v[3] = -1e-3;
        let u = Field::from_values(g, v.clone()).unwrap();
        assert!(matches!(apply_F(&spec, &u, Exterior::Zero), Err(Error::OutOfTube { index: 3, .. })));
        v[3] = -1e-12;
        let u = Field::from_values(g, v).unwrap();
        assert_eq!(apply_F(&spec, &u, Exterior::Zero).unwrap().values()[3], 0.0);
    }

    #[test]
    fn condition_reports() {
        let rs: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0 * 3.0).collect();
        let fisher = ReactionSpec::fisher(3.0, 2.0);
        let r = check_reaction_conditions(&fisher, &rs);
        assert!(r.passed());
        assert!((r.lipschitz_k - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.p - 4.0).abs() < 1e-12);
        assert_eq!(r.untested.len(), 2);
        let kpp = ReactionSpec::new(1.0, 1, LocalTerm::Kpp, 3.0, 2.0, None).unwrap();
        assert!(check_reaction_conditions(&kpp, &rs).passed());
        let over = ReactionSpec::fisher(3.0, 2.0).with_nu_scale(2.0);
        let r = check_reaction_conditions(&over, &rs);
        assert!(!r.bounded_by_beta_r && !r.passed());
        assert!(over.f(0.75) > 2.0 * 0.75);
    }

    #[test]
    fn kernel_domination_cases() {
        let g = make_grid(1, 20.0, 64).unwrap();
        let a = exp_kernel(1, 1.0);
        let local = ReactionSpec::fisher(1.0, 1.0);
        assert!(check_kernel_domination(&local, &a, 2.0, &g).is_some());
        let same = ReactionSpec::new(0.0, 1, LocalTerm::None, 1.0, 1.0, Some(a.clone())).unwrap();
        assert!(check_kernel_domination(&same, &a, 2.0, &g).is_some());
        let narrow = normalize_kernel(&build_profile(Family::GaussianControl { rate: 1.0 }).unwrap(), 1).unwrap();
        let wide = ReactionSpec::new(0.0, 1, LocalTerm::None, 1.0, 1.0, Some(exp_kernel(1, 0.05))).unwrap();
        assert!(check_kernel_domination(&wide, &narrow, 1.05, &g).is_none());
    }

    #[test]
    fn g_is_constant_on_constants_and_below_beta() {
        let g = make_grid(1, 10.0, 32).unwrap();
        let spec = ReactionSpec::new(0.5, 2, LocalTerm::Kpp, 1.0, 1.0, Some(exp_kernel(1, 1.0))).unwrap();
        for r in [0.1, 0.5, 0.9] {
            let out = apply_G(&spec, &Field::constant(g, r), Exterior::Constant(r)).unwrap();
            let first = out.values()[0];
            assert!(out.values().iter().all(|&v| (v - first).abs() < 1e-14));
            assert!(first < 1.0);
        }
    }
}
