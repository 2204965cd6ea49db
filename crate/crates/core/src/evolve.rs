//! Explicit time integration of `∂ₜu = κ a∗u − m u − u G(u)` on an
//! expanding grid, plus the truncated series for the linear majorant
//! `∂ₜw = κ a∗w − m w`.

use std::io::Write;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::front::{level_crossing, CrossingMode, FrontTrace};
use crate::grid::{Exterior, Field, Grid, KernelOperator};
use crate::reaction::{ReactionOperator, ReactionSpec};
use crate::tailprofiles::Kernel;

/// Post-step excursions outside `[0, θ]` up to this size are clamped.
pub const CLAMP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kappa: f64,
    pub m: f64,
}

impl ModelParams {
    pub fn new(kappa: f64, m: f64) -> Result<Self> {
        let p = ModelParams { kappa, m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.m > 0.0 && self.kappa.is_finite() && self.m.is_finite()) {
            return Err(Error::ParameterOutOfRange("κ and m must be positive".into()));
        }
        if !(self.kappa > self.m) {
            return Err(Error::ParameterOutOfRange(format!(
                "β = κ − m = {} must be positive",
                self.kappa - self.m
            )));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.kappa - self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcClass {
    /// Decaying in every direction; zero outside the domain.
    Integrable,
    /// Plateau towards the low edges, decaying towards the high edges.
    Monotone,
}

impl IcClass {
    pub fn exterior(self) -> Exterior {
        match self {
            IcClass::Integrable => Exterior::Zero,
            IcClass::Monotone => Exterior::Plateau,
        }
    }
}

/// How the region added by an expansion is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpansionFill {
    /// Zero beyond the old high edges (plateau replication on the low edges
    /// for monotone data).
    #[default]
    Zero,
    /// The nearest old edge value scaled by the far-field shape: `a(|x|)`
    /// for integrable data, the kernel's tail mass beyond `x` for monotone
    /// data (a product of axis tails in 2D).
    TailShape,
}

/// When and how the domain grows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainPolicy {
    /// Expand once the watched edge values exceed this fraction of `θ`.
    pub expand_threshold: f64,
    /// Largest points per axis; beyond it the grid is coarsened instead.
    pub n_cap: usize,
    /// Expansion past this half-width fails.
    pub max_half_width: f64,
    #[serde(default)]
    pub fill: ExpansionFill,
}

impl DomainPolicy {
    pub fn for_dim(dim: u32) -> Self {
        DomainPolicy {
            expand_threshold: 1e-8,
            n_cap: if dim == 1 { 1 << 16 } else { 512 },
            max_half_width: 1e30,
            fill: ExpansionFill::Zero,
        }
    }
}

/// A running simulation: parameters, operators, the current field and time.
#[derive(Debug)]
pub struct SimState {
    params: ModelParams,
    reaction: ReactionSpec,
    kernel: Kernel,
    field: Field,
    time: f64,
    ic_class: IcClass,
    exterior: Exterior,
    policy: DomainPolicy,
    op: KernelOperator,
    react: ReactionOperator,
    expansions: usize,
    work: Work,
}

#[derive(Debug, Default)]
struct Work {
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
    conv: Vec<f64>,
    ug: Vec<f64>,
    next: Vec<f64>,
}

impl Work {
    fn sized(len: usize) -> Self {
        let v = || vec![0.0; len];
        Work {
            k: [v(), v(), v(), v()],
            stage: v(),
            conv: v(),
            ug: v(),
            next: v(),
        }
    }
}

impl SimState {
    pub fn new(
        params: ModelParams,
        reaction: ReactionSpec,
        kernel: Kernel,
        field: Field,
        ic_class: IcClass,
        policy: DomainPolicy,
    ) -> Result<Self> {
        params.validate()?;
        if (reaction.beta() - params.beta()).abs() > 1e-12 * params.beta() {
            return Err(Error::ParameterOutOfRange(format!(
                "reaction β = {} differs from κ − m = {}",
                reaction.beta(),
                params.beta()
            )));
        }
        if kernel.dim() != field.grid().dim() {
            return Err(Error::GridMismatch);
        }
        let theta = reaction.theta();
        if let Some((i, &v)) = field
            .values()
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= -CLAMP_TOL && v <= theta + CLAMP_TOL))
        {
            return Err(Error::OutOfTube { index: i, value: v, theta });
        }
        let exterior = ic_class.exterior();
        let grid = *field.grid();
        let op = KernelOperator::new(&kernel, &grid, exterior)?;
        let react = ReactionOperator::new(&reaction, &grid, exterior)?;
        let mut field = field;
        field.values_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, theta));
        Ok(SimState {
            params,
            reaction,
            kernel,
            field,
            time: 0.0,
            ic_class,
            exterior,
            policy,
            op,
            react,
            expansions: 0,
            work: Work::sized(grid.len()),
        })
    }

    /// Replaces the exterior model (for example a constant far field).
    pub fn with_exterior(mut self, exterior: Exterior) -> Result<Self> {
        let grid = *self.field.grid();
        self.op = KernelOperator::new(&self.kernel, &grid, exterior)?;
        self.react = ReactionOperator::new(&self.reaction, &grid, exterior)?;
        self.exterior = exterior;
        Ok(self)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn reaction(&self) -> &ReactionSpec {
        &self.reaction
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn grid(&self) -> &Grid {
        self.field.grid()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn ic_class(&self) -> IcClass {
        self.ic_class
    }

    pub fn policy(&self) -> &DomainPolicy {
        &self.policy
    }

    pub fn expansions(&self) -> usize {
        self.expansions
    }

    pub fn theta(&self) -> f64 {
        self.reaction.theta()
    }

    /// `0.1 / (κ + m + β + θ·Lip(G))`.
    pub fn dt_max(&self) -> f64 {
        let p = &self.params;
        0.1 / (p.kappa + p.m + p.beta() + self.reaction.lipschitz_g_theta())
    }

    /// Largest `|u|` on the outermost two node layers.
    pub fn boundary_mass(&self) -> f64 {
        self.field.boundary_mass()
    }

    /// The edge value that triggers expansion for this state's class.
    pub fn watched_edge_value(&self) -> f64 {
        match self.ic_class {
            IcClass::Integrable => self.boundary_mass(),
            IcClass::Monotone => {
                let g = self.field.grid();
                let n = g.n();
                let u = self.field.values();
                if g.dim() == 1 {
                    u[n - 2].abs().max(u[n - 1].abs())
                } else {
                    let mut m: f64 = 0.0;
                    for i in 0..n {
                        for j in [n - 2, n - 1] {
                            m = m.max(u[i * n + j].abs()).max(u[j * n + i].abs());
                        }
                    }
                    m
                }
            }
        }
    }

    /// Right side `κ a∗u − m u − u G(u)` for a stage value.
    fn rhs(&mut self, stage: &[f64], out: &mut [f64]) -> Result<()> {
        let theta = self.reaction.theta();
        let w = &mut self.work;
        for (s, &v) in w.stage.iter_mut().zip(stage) {
            *s = v.clamp(0.0, theta);
        }
        self.op.apply_into(&w.stage, &mut w.conv);
        self.react.apply_ug_into(&w.stage, &mut w.ug)?;
        let (kappa, m) = (self.params.kappa, self.params.m);
        for (((o, &c), &u), &g) in out.iter_mut().zip(&w.conv).zip(&w.stage).zip(&w.ug) {
            *o = kappa * c - m * u - g;
        }
        Ok(())
    }

    /// One classical RK4 step from `start` into `work.next`.
    fn rk4(&mut self, start: &[f64], dt: f64) -> Result<()> {
        let len = start.len();
        let mut tmp = vec![0.0; len];
        let mut k = std::mem::take(&mut self.work.k);
        self.rhs(start, &mut k[0])?;
        for (t, (&u, &d)) in tmp.iter_mut().zip(start.iter().zip(&k[0])) {
            *t = u + 0.5 * dt * d;
        }
        self.rhs(&tmp, &mut k[1])?;
        for (t, (&u, &d)) in tmp.iter_mut().zip(start.iter().zip(&k[1])) {
            *t = u + 0.5 * dt * d;
        }
        self.rhs(&tmp, &mut k[2])?;
        for (t, (&u, &d)) in tmp.iter_mut().zip(start.iter().zip(&k[2])) {
            *t = u + dt * d;
        }
        self.rhs(&tmp, &mut k[3])?;
        let next = &mut self.work.next;
        for i in 0..len {
            next[i] = start[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        self.work.k = k;
        Ok(())
    }

    fn excess(&self, v: &[f64]) -> f64 {
        let theta = self.reaction.theta();
        v.iter().fold(0.0, |e, &x| e.max(-x).max(x - theta))
    }

    /// Advances by `dt ≤ dt_max`, clamping excursions up to [`CLAMP_TOL`]
    /// and retrying once with two half steps before failing.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let dt_max = self.dt_max();
        if !(dt > 0.0) || dt > dt_max * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, dt_max });
        }
        let start = self.field.values().to_vec();
        self.rk4(&start, dt)?;
        let mut excess = self.excess(&self.work.next);
        if excess > CLAMP_TOL {
            self.rk4(&start, 0.5 * dt)?;
            let mid = self.work.next.clone();
            self.rk4(&mid, 0.5 * dt)?;
            excess = self.excess(&self.work.next);
            if excess > CLAMP_TOL {
                return Err(Error::TubeViolation {
                    time: self.time + dt,
                    excess,
                });
            }
        }
        let theta = self.reaction.theta();
        for (u, &v) in self.field.values_mut().iter_mut().zip(&self.work.next) {
            *u = v.clamp(0.0, theta);
        }
        self.time += dt;
        Ok(())
    }

    /// Grows the domain when the watched edge value exceeds the threshold.
    /// Returns whether an expansion happened.
    pub fn expand_domain_if_needed(&mut self) -> Result<bool> {
        if self.watched_edge_value() <= self.policy.expand_threshold * self.reaction.theta() {
            return Ok(false);
        }
        self.expand()?;
        Ok(true)
    }

    /// Doubles `L`; doubles `n` as well while below the cap (keeping `h`),
    /// otherwise restricts to a grid of spacing `2h` by full weighting.
    pub fn expand(&mut self) -> Result<()> {
        let old = *self.field.grid();
        let new_half = 2.0 * old.half_width();
        if new_half > self.policy.max_half_width {
            return Err(Error::MaxDomainExceeded {
                requested: new_half,
                cap: self.policy.max_half_width,
            });
        }
        let n = old.n();
        let refine = 2 * n <= self.policy.n_cap;
        let new_n = if refine { 2 * n } else { n };
        let grid = Grid::new(old.dim(), new_half, new_n)?;
        let plateau = self.ic_class == IcClass::Monotone;
        let u = self.field.values();
        let ext = |i: i64| -> Option<usize> {
            // Old index along one axis under the exterior continuation.
            if i >= n as i64 {
                None
            } else if i < 0 {
                if plateau {
                    Some(0)
                } else {
                    None
                }
            } else {
                Some(i as usize)
            }
        };
        // Each new node's old-index stencil along one axis.
        let stencil = |j: usize| -> Vec<(i64, f64)> {
            if refine {
                vec![(j as i64 - (n / 2) as i64, 1.0)]
            } else {
                let c = 2 * j as i64 - (n / 2) as i64;
                vec![(c - 1, 0.25), (c, 0.5), (c + 1, 0.25)]
            }
        };
        let mut values = vec![0.0; grid.len()];
        if old.dim() == 1 {
            for (j, v) in values.iter_mut().enumerate() {
                *v = stencil(j)
                    .into_iter()
                    .filter_map(|(i, w)| ext(i).map(|i| w * u[i]))
                    .sum();
            }
        } else {
            let stencils: Vec<Vec<(i64, f64)>> = (0..new_n).map(stencil).collect();
            for j1 in 0..new_n {
                for j2 in 0..new_n {
                    let mut s = 0.0;
                    for &(i1, w1) in &stencils[j1] {
                        let Some(a) = ext(i1) else { continue };
                        for &(i2, w2) in &stencils[j2] {
                            if let Some(b) = ext(i2) {
                                s += w1 * w2 * u[a * n + b];
                            }
                        }
                    }
                    values[j1 * new_n + j2] = s;
                }
            }
        }
        let theta = self.reaction.theta();
        values.iter_mut().for_each(|v| *v = v.clamp(0.0, theta));
        self.op = KernelOperator::new(&self.kernel, &grid, self.exterior)?;
        if self.policy.fill == ExpansionFill::TailShape {
            self.fill_tail(&old, &grid, &mut values);
        }
        self.field = Field::from_values(grid, values)?;
        self.react = ReactionOperator::new(&self.reaction, &grid, self.exterior)?;
        self.work = Work::sized(grid.len());
        self.expansions += 1;
        Ok(())
    }

    /// Re-seeds the nodes of `grid` outside the box `SEED_FRACTION·old` from
    /// the nearest node inside it, scaled by the far-field shape ratio
    /// (capped at 1). Seeding from inside the old domain rather than from its
    /// edge keeps the edge deficit of the truncated convolution from
    /// compounding over successive expansions.
    fn fill_tail(&self, old: &Grid, grid: &Grid, values: &mut [f64]) {
        const SEED_FRACTION: f64 = 0.75;
        let n = grid.n();
        let eps = 1e-9 * grid.spacing();
        let (box_lo, box_hi) = (SEED_FRACTION * old.coord(0), SEED_FRACTION * old.coord(old.n() - 1));
        let lo = (0..n).find(|&j| grid.coord(j) >= box_lo - eps).unwrap_or(0);
        let hi = (0..n).rev().find(|&j| grid.coord(j) <= box_hi + eps).unwrap_or(n - 1);
        let monotone = self.ic_class == IcClass::Monotone;
        let profile = self.kernel.profile();
        let h = grid.spacing();
        let tail = self.op.edge_tail();
        // log of the kernel mass beyond x along one axis, from the operator table.
        let log_axis_tail = |x: f64| -> f64 {
            if grid.dim() == 1 {
                return self.kernel.tail_mass_1d(x).ln();
            }
            let p = (x / h - 0.5).clamp(0.0, (tail.len() - 1) as f64);
            let i = (p.floor() as usize).min(tail.len().saturating_sub(2));
            let f = p - i as f64;
            (1.0 - f) * tail[i].ln() + f * tail[i + 1].ln()
        };
        let shape_ratio = |x: &[f64], p: &[f64]| -> f64 {
            let r = if monotone {
                x.iter()
                    .zip(p)
                    .filter(|(a, b)| a > b)
                    .map(|(&a, &b)| log_axis_tail(a) - log_axis_tail(b))
                    .sum::<f64>()
            } else {
                let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
                profile.log_eval(norm(x)) - profile.log_eval(norm(p))
            };
            r.min(0.0).exp()
        };
        let outside = |j: usize| j < lo || j > hi;
        // Monotone data keep their computed values and plateau on the low side.
        let filled = |j: usize| if monotone { j > hi } else { outside(j) };
        if grid.dim() == 1 {
            let src_at = |j: usize| j.clamp(lo, hi);
            for j in (0..n).filter(|&j| filled(j)) {
                let src = src_at(j);
                let r = shape_ratio(&[grid.coord(j)], &[grid.coord(src)]);
                values[j] = values[src] * r;
            }
        } else {
            for j1 in 0..n {
                for j2 in 0..n {
                    if !(filled(j1) || filled(j2)) {
                        continue;
                    }
                    let (s1, s2) = (j1.clamp(lo, hi), j2.clamp(lo, hi));
                    let r = shape_ratio(&[grid.coord(j1), grid.coord(j2)], &[grid.coord(s1), grid.coord(s2)]);
                    values[j1 * n + j2] = values[s1 * n + s2] * r;
                }
            }
        }
    }

    /// Integrates to `t_end`, recording a snapshot every `snapshot_dt` (and
    /// at the start). The observer sees each snapshot and may stop the run.
    pub fn solve<F>(&mut self, t_end: f64, snapshot_dt: f64, probe: &FrontProbe, mut observer: F) -> Result<Trajectory>
    where
        F: FnMut(&SimState) -> ControlFlow<()>,
    {
        if !(t_end > self.time) || !(snapshot_dt > 0.0) {
            return Err(Error::ParameterOutOfRange(format!(
                "need t_end > t = {} and snapshot_dt > 0",
                self.time
            )));
        }
        let mut traj = Trajectory::new(probe.clone());
        traj.record(self);
        if observer(self).is_break() {
            return Ok(traj);
        }
        let dt_max = self.dt_max();
        let mut index = 1u64;
        let t0 = self.time;
        loop {
            let target = (t0 + index as f64 * snapshot_dt).min(t_end);
            while self.time < target - 1e-12 * target.abs().max(1.0) {
                let dt = dt_max.min(target - self.time);
                self.step(dt)?;
                self.expand_domain_if_needed()?;
            }
            self.time = target;
            traj.record(self);
            if observer(self).is_break() || target >= t_end {
                break;
            }
            index += 1;
        }
        Ok(traj)
    }
}

/// Which crossings a trajectory records: levels as fractions of `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontProbe {
    pub levels: Vec<f64>,
    pub mode: CrossingMode,
}

impl FrontProbe {
    pub fn new(levels: Vec<f64>, mode: CrossingMode) -> Self {
        FrontProbe { levels, mode }
    }

    /// The levels `{0.1θ, 0.5θ, 0.9θ}`.
    pub fn standard(mode: CrossingMode) -> Self {
        FrontProbe::new(vec![0.1, 0.5, 0.9], mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub positions: Vec<Option<f64>>,
    pub sup_norm: f64,
    pub boundary_mass: f64,
    pub half_width: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub probe: FrontProbe,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn new(probe: FrontProbe) -> Self {
        Trajectory {
            probe,
            snapshots: Vec::new(),
        }
    }

    fn record(&mut self, state: &SimState) {
        let theta = state.theta();
        let positions = self
            .probe
            .levels
            .iter()
            .map(|&l| level_crossing(state.field(), l * theta, self.probe.mode))
            .collect();
        self.snapshots.push(Snapshot {
            time: state.time(),
            positions,
            sup_norm: state.field().sup_norm(),
            boundary_mass: state.boundary_mass(),
            half_width: state.grid().half_width(),
            n: state.grid().n(),
        });
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn front_trace(&self) -> FrontTrace {
        FrontTrace {
            levels: self.probe.levels.clone(),
            times: self.times(),
            positions: (0..self.probe.levels.len())
                .map(|l| self.snapshots.iter().map(|s| s.positions[l]).collect())
                .collect(),
        }
    }

    /// CSV with columns `t,level,position,predicted_eta,boundary_mass`; empty
    /// cells mark missing crossings or predictions.
    pub fn write_csv<W: Write>(&self, out: W, predicted: impl Fn(f64) -> Option<f64>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["t", "level", "position", "predicted_eta", "boundary_mass"])
            .map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.snapshots {
            let eta = predicted(s.time);
            for (l, p) in self.probe.levels.iter().zip(&s.positions) {
                w.write_record([
                    s.time.to_string(),
                    l.to_string(),
                    opt(*p),
                    opt(eta),
                    s.boundary_mass.to_string(),
                ])
                .map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of [`solve_linear_series`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSeries {
    pub field: Field,
    /// `e^{−mt} ‖u₀‖ Σ_{n>N} (κt)ⁿ/n!`.
    pub truncation_bound: f64,
    pub terms: usize,
}

/// Smallest term count satisfying `N ≥ κte + 20`.
pub fn default_series_terms(kappa: f64, t: f64) -> usize {
    (kappa * t * std::f64::consts::E + 20.0).ceil() as usize
}

/// `w(t) = e^{−mt} Σ_{n=0}^{N} (κt)ⁿ/n! a^{∗n}∗u₀` with the convolutions of `op`.
pub fn solve_linear_series(
    op: &mut KernelOperator,
    u0: &Field,
    t: f64,
    kappa: f64,
    m: f64,
    n_terms: usize,
    tolerance: f64,
) -> Result<LinearSeries> {
    if u0.grid() != op.grid() {
        return Err(Error::GridMismatch);
    }
    let x = kappa * t;
    let norm = u0.sup_norm();
    // Tail of the exponential series, summed in log space.
    let mut log_term = 0.0;
    for k in 1..=n_terms {
        log_term += x.ln() - (k as f64).ln();
    }
    let mut tail = 0.0;
    if x > 0.0 {
        let mut k = n_terms + 1;
        let mut lt = log_term + x.ln() - (k as f64).ln();
        loop {
            let term = (lt - m * t).exp();
            tail += term;
            if term <= 1e-17 * tail || k > n_terms + 10_000 {
                break;
            }
            k += 1;
            lt += x.ln() - (k as f64).ln();
        }
    }
    let bound = norm * tail;
    if bound > tolerance {
        return Err(Error::TruncationBoundExceeded { bound, tolerance });
    }
    let mut term = u0.values().to_vec();
    let mut sum = term.clone();
    let mut next = vec![0.0; term.len()];
    for k in 1..=n_terms {
        if x == 0.0 {
            break;
        }
        op.apply_into(&term, &mut next);
        let c = x / k as f64;
        for (t, &v) in term.iter_mut().zip(&next) {
            *t = c * v;
        }
        for (s, &v) in sum.iter_mut().zip(&term) {
            *s += v;
        }
    }
    let decay = (-m * t).exp();
    sum.iter_mut().for_each(|v| *v *= decay);
    Ok(LinearSeries {
        field: Field::from_values(*u0.grid(), sum)?,
        truncation_bound: bound,
        terms: n_terms,
    })
}
