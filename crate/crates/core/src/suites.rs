//! Numeric verification suites: each returns measured margins that a
//! caller compares against tolerances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::evolve::{default_series_terms, solve_linear_series, DomainPolicy, IcClass, ModelParams, SimState};
use crate::front::{lambert_w_minus1, predicted_eta, LevelSetSpec, LevelShape};
use crate::grid::{convolve, convolve_direct, make_grid, DiscreteKernel, Exterior, Field, KernelOperator};
use crate::quad;
use crate::reaction::ReactionSpec;
use crate::theory::{check_level_inclusion, find_tau0, lambda0, subsolution_residual, LevelInclusion, SubsolutionSpec};
use crate::tailprofiles::{build_profile, normalize_kernel, Family, Kernel, TailProfile};

/// Largest relative sup-norm gap between FFT and direct convolution over
/// `instances` random kernels and fields, `n` a random power of two in
/// `[16, max_n]`.
pub fn convolution_oracle(dim: u32, instances: usize, max_n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let top = max_n.max(16).ilog2();
        let n = 1usize << rng.gen_range(4..=top);
        let g = make_grid(dim, rng.gen_range(1.0..20.0), n)?;
        let side = DiscreteKernel::side(&g).pow(dim);
        let k = DiscreteKernel::from_values(g, (0..side).map(|_| rng.gen::<f64>()).collect())?;
        let u = Field::from_values(g, (0..g.len()).map(|_| rng.gen::<f64>() - 0.3).collect())?;
        let fast = convolve(&k, &u)?;
        let slow = convolve_direct(&k, &u)?;
        let scale = slow.sup_norm().max(f64::MIN_POSITIVE);
        let gap = fast.values().iter().zip(slow.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(gap / scale);
    }
    Ok(worst)
}

/// Worst violations over a batch of seeded runs; each is `≤ 0` when the
/// property holds exactly.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvolutionMargins {
    /// `max(−u, u − θ)`.
    pub tube: f64,
    /// `max(u − v)` for ordered data `u₀ ≤ v₀`.
    pub comparison: f64,
    /// `max(u − w)` against the linear series.
    pub majorant: f64,
    /// `max(κt e^{−κt} a∗u₀ − u)`.
    pub minorant: f64,
    pub runs: usize,
}

impl EvolutionMargins {
    fn merge(self, o: EvolutionMargins) -> EvolutionMargins {
        EvolutionMargins {
            tube: self.tube.max(o.tube),
            comparison: self.comparison.max(o.comparison),
            majorant: self.majorant.max(o.majorant),
            minorant: self.minorant.max(o.minorant),
            runs: self.runs + o.runs,
        }
    }

    fn none() -> Self {
        EvolutionMargins {
            tube: f64::NEG_INFINITY,
            comparison: f64::NEG_INFINITY,
            majorant: f64::NEG_INFINITY,
            minorant: f64::NEG_INFINITY,
            runs: 0,
        }
    }
}

/// Random compact data `u₀ ≤ v₀` on an `n`-point grid per axis (half-width 8),
/// both evolved to `horizon` with identical steps. Tube and ordering are
/// checked after every step, the linear bounds at integer times.
pub fn evolution_suite(
    kernel: &Kernel,
    reaction: &ReactionSpec,
    params: ModelParams,
    n: usize,
    runs: usize,
    horizon: f64,
    seed: u64,
) -> Result<EvolutionMargins> {
    let results: Vec<Result<EvolutionMargins>> = (0..runs as u64)
        .into_par_iter()
        .map(|i| evolution_run(kernel, reaction, params, n, horizon, seed.wrapping_add(i)))
        .collect();
    let mut total = EvolutionMargins::none();
    for r in results {
        total = total.merge(r?);
    }
    Ok(total)
}

fn evolution_run(
    kernel: &Kernel,
    reaction: &ReactionSpec,
    params: ModelParams,
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<EvolutionMargins> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = reaction.theta();
    let grid = make_grid(kernel.dim(), 8.0, n)?;
    let radius = rng.gen_range(0.5..3.0);
    let inside = |p: [f64; 2], r: f64| p[0] * p[0] + p[1] * p[1] <= r * r;
    let mut u0 = Vec::with_capacity(grid.len());
    let mut v0 = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let p = grid.point(k);
        let u = if inside(p, radius) { rng.gen_range(0.0..theta) } else { 0.0 };
        let bump = if inside(p, radius + 1.0) { rng.gen_range(0.0..0.3 * theta) } else { 0.0 };
        u0.push(u);
        v0.push((u + bump).min(theta));
    }
    let u0 = Field::from_values(grid, u0)?;
    let v0 = Field::from_values(grid, v0)?;
    let policy = DomainPolicy::for_dim(kernel.dim());
    let mut su = SimState::new(params, reaction.clone(), kernel.clone(), u0.clone(), IcClass::Integrable, policy)?;
    let mut sv = SimState::new(params, reaction.clone(), kernel.clone(), v0, IcClass::Integrable, policy)?;
    let mut op = KernelOperator::new(kernel, &grid, Exterior::Zero)?;
    let au0 = op.apply(&u0)?;

    let mut m = EvolutionMargins::none();
    m.runs = 1;
    let dt_max = su.dt_max();
    let mut checkpoint = 1.0f64.min(horizon);
    while su.time() < horizon - 1e-12 {
        let dt = dt_max.min(checkpoint - su.time());
        su.step(dt)?;
        sv.step(dt)?;
        let (u, v) = (su.field().values(), sv.field().values());
        for (a, b) in u.iter().zip(v) {
            m.tube = m.tube.max(-a).max(a - theta);
            m.comparison = m.comparison.max(a - b);
        }
        if (su.time() - checkpoint).abs() <= 1e-9 {
            let t = checkpoint;
            let kappa = params.kappa;
            let w = solve_linear_series(&mut op, &u0, t, kappa, params.m, default_series_terms(kappa, t), 1e-10)?;
            let low = kappa * t * (-kappa * t).exp();
            for ((a, w), c) in u.iter().zip(w.field.values()).zip(au0.values()) {
                m.majorant = m.majorant.max(a - w);
                m.minorant = m.minorant.max(low * c - a);
            }
            checkpoint = (checkpoint + 1.0).min(horizon);
        }
    }
    Ok(m)
}

/// `λ` with `η(t) / (βt (log t)^λ)` at the four check times.
pub type LambertRatios = Vec<(f64, [f64; 4])>;

/// Lambert checks: the identity residual `|w e^w − ν|` on 10³ log-spaced
/// `ν ∈ (−1/e, −10⁻⁸)` (infinite if some `w ≥ −1`), and the ratios
/// `η(t) / (βt (log t)^λ)` at `t ∈ {10⁴, 10⁵, 10⁶, 10⁷}` per `λ`.
pub fn lambert_checks(lambdas: &[f64]) -> Result<(f64, LambertRatios)> {
    let lo = 1e-8f64;
    let hi = (-1.0f64).exp() * (1.0 - 1e-12);
    let mut worst: f64 = 0.0;
    for nu in quad::geometric_ladder(lo, hi, 1000) {
        let w = lambert_w_minus1(-nu)?;
        if !(w < -1.0) && nu < hi {
            worst = f64::INFINITY;
        }
        worst = worst.max((w * w.exp() + nu).abs());
    }
    let mut ratios = Vec::new();
    for &lambda in lambdas {
        let p = build_profile(Family::AlmostLinear { lambda })?;
        let mut r = [0.0; 4];
        for (slot, t) in r.iter_mut().zip([1e4, 1e5, 1e6, 1e7f64]) {
            *slot = predicted_eta(&p, 1.0, t)? / (t * t.ln().powf(lambda));
        }
        ratios.push((lambda, r));
    }
    Ok((worst, ratios))
}

/// Outcome of certifying the sub-solution for one family and `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsolutionCheck {
    pub family: Family,
    pub eps: f64,
    pub lam: f64,
    pub tau0: f64,
    pub times: [f64; 3],
    /// Largest residual over the probe points at `times`, divided by `λ`.
    pub worst_ratio: f64,
}

/// Finds `τ₀` for the sub-solution built from `family` (which is also the
/// dispersal kernel) and evaluates the residual at `τ₀, 2τ₀, 4τ₀`.
pub fn certify_subsolution(family: &Family, reaction: &ReactionSpec, kappa: f64, m: f64, eps: f64) -> Result<SubsolutionCheck> {
    let profile = build_profile(family.clone())?;
    let kernel = normalize_kernel(&profile, 1)?;
    let beta = kappa - m;
    let level = LevelSetSpec::new(LevelShape::Radial, profile, beta, 1)?;
    let delta = 0.25 * eps * beta;
    let lam = lambda0(reaction, delta);
    let spec = SubsolutionSpec::new(level, eps, lam, 1.0, Some(delta))?;
    let (tau0, _) = find_tau0(&spec, &kernel, kappa, m, 1.0, 1.0, 200)?;
    let times = [tau0, 2.0 * tau0, 4.0 * tau0];
    let mut worst = f64::NEG_INFINITY;
    for &t in &times {
        let xs = spec.probe_points(t, 64);
        worst = worst.max(subsolution_residual(&spec, &kernel, kappa, m, &xs, &[t]));
    }
    Ok(SubsolutionCheck {
        family: family.clone(),
        eps,
        lam,
        tau0,
        times,
        worst_ratio: worst / lam,
    })
}

/// The families used by the sub-solution and inclusion suites.
pub fn certified_families() -> Vec<Family> {
    vec![
        Family::Polynomial { m: 1.0, mu: 1.0, d: 1 },
        Family::StretchedExp {
            scale: 1.0,
            c: 1.0,
            gamma: 0.5,
            nu: 0.0,
        },
    ]
}

/// Level inclusion for `profile` at `t, 2t, 4t`.
pub fn inclusion_check(profile: &TailProfile, beta: f64, eps: f64, alpha0: f64, t: f64) -> Result<LevelInclusion> {
    check_level_inclusion(profile, beta, eps, alpha0, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_agrees() {
        assert!(convolution_oracle(1, 5, 64, 1).unwrap() <= 1e-10);
        assert!(convolution_oracle(2, 3, 16, 2).unwrap() <= 1e-10);
    }

    #[test]
    fn evolution_margins_hold() {
        let k = normalize_kernel(&build_profile(Family::ExponentialControl { rate: 1.0 }).unwrap(), 1).unwrap();
        let m = evolution_suite(&k, &ReactionSpec::fisher(1.0, 1.0), ModelParams::new(1.5, 0.5).unwrap(), 32, 2, 2.0, 5)
            .unwrap();
        assert_eq!(m.runs, 2);
        assert!(m.tube <= 1e-8 && m.comparison <= 1e-8, "{m:?}");
        assert!(m.majorant <= 1e-6 && m.minorant <= 1e-6, "{m:?}");
    }

    #[test]
    fn lambert_ratios_decrease() {
        let (res, ratios) = lambert_checks(&[2.0]).unwrap();
        assert!(res <= 1e-13);
        let r = ratios[0].1;
        assert!(r.windows(2).all(|w| w[1] < w[0]));
    }
}
