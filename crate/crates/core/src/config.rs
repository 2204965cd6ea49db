//! Experiment configuration: a TOML document holding every physics
//! parameter of a run.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! kappa = 1.5
//! m = 0.5
//!
//! [kernel]
//! family = "polynomial"
//! m = 1.0
//! mu = 1.0
//! d = 1
//!
//! [initial]
//! kind = "bump"
//!
//! [grid]
//! dim = 1
//! half_width = 32.0
//! n = 256
//!
//! [run]
//! horizon = 30.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{DomainPolicy, ExpansionFill, IcClass, ModelParams, SimState};
use crate::front::{diagonal_front_bounds, lambda_radius, predicted_eta, CrossingMode, LevelSetSpec, LevelShape};
use crate::grid::{sample_field, sample_orthant_integral, Field, Grid};
use crate::reaction::{LocalTerm, ReactionSpec};
use crate::tailprofiles::{build_profile, normalize_kernel, Family, Kernel};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kappa: f64,
    pub m: f64,
    #[serde(default = "one")]
    pub theta: f64,
}

/// Initial data. Heights are fractions of `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `height·θ` on `|x| ≤ radius`, zero outside.
    Bump {
        #[serde(default = "one")]
        height: f64,
        #[serde(default = "one")]
        radius: f64,
    },
    /// `height·θ` on `x ≤ edge` (d = 1).
    Plateau {
        #[serde(default = "one")]
        height: f64,
        #[serde(default)]
        edge: f64,
    },
    /// `height·θ·∫_{y ≥ x} a(y) dy` over the orthant above `x` (d = 2).
    OrthantIntegral {
        #[serde(default = "one")]
        height: f64,
    },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Bump { height: 1.0, radius: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSection {
    #[serde(default = "ReactionSection::default_local")]
    pub local: LocalTerm,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "ReactionSection::default_k")]
    pub k: u32,
    /// The competition kernel, needed when `alpha < 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub competition: Option<Family>,
    /// Scales the local coefficient; anything but 1 breaks `f'(0) = β`.
    #[serde(default = "one")]
    pub nu_scale: f64,
}

impl ReactionSection {
    fn default_local() -> LocalTerm {
        LocalTerm::Fisher
    }

    fn default_k() -> u32 {
        1
    }
}

impl Default for ReactionSection {
    fn default() -> Self {
        ReactionSection {
            local: LocalTerm::Fisher,
            alpha: 1.0,
            k: 1,
            competition: None,
            nu_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: u32,
    pub half_width: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expand_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_half_width: Option<f64>,
    #[serde(default)]
    pub fill: ExpansionFill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "RunSection::default_horizon")]
    pub horizon: f64,
    #[serde(default = "RunSection::default_snapshot_dt")]
    pub snapshot_dt: f64,
    /// Front levels as fractions of `θ`.
    #[serde(default = "RunSection::default_levels")]
    pub levels: Vec<f64>,
    /// Spacing of the field dumps under `snapshots/`; none when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_dump_dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl RunSection {
    fn default_horizon() -> f64 {
        30.0
    }

    fn default_snapshot_dt() -> f64 {
        0.25
    }

    fn default_levels() -> Vec<f64> {
        vec![0.1, 0.5, 0.9]
    }
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            horizon: Self::default_horizon(),
            snapshot_dt: Self::default_snapshot_dt(),
            levels: Self::default_levels(),
            field_dump_dt: None,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub families: Vec<Family>,
}

/// Names of the verification suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    ReactionConditions,
    ConvolutionOracle,
    Tube,
    Comparison,
    Majorant,
    Minorant,
    Lambert,
    Subsolution,
    Inclusion,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::ReactionConditions,
        Suite::ConvolutionOracle,
        Suite::Tube,
        Suite::Comparison,
        Suite::Majorant,
        Suite::Minorant,
        Suite::Lambert,
        Suite::Subsolution,
        Suite::Inclusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::ReactionConditions => "reaction-conditions",
            Suite::ConvolutionOracle => "convolution-oracle",
            Suite::Tube => "tube",
            Suite::Comparison => "comparison",
            Suite::Majorant => "majorant",
            Suite::Minorant => "minorant",
            Suite::Lambert => "lambert",
            Suite::Subsolution => "subsolution",
            Suite::Inclusion => "inclusion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "VerifySection::default_suites")]
    pub suites: Vec<Suite>,
    /// Seeded evolution runs for the tube, comparison and linear-bound suites.
    #[serde(default = "VerifySection::default_runs")]
    pub runs: usize,
    /// Grid points per axis for those runs.
    #[serde(default = "VerifySection::default_n")]
    pub n: usize,
    #[serde(default = "VerifySection::default_horizon")]
    pub horizon: f64,
}

impl VerifySection {
    fn default_suites() -> Vec<Suite> {
        Suite::ALL.to_vec()
    }

    fn default_runs() -> usize {
        20
    }

    fn default_n() -> usize {
        64
    }

    fn default_horizon() -> f64 {
        5.0
    }
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            suites: Self::default_suites(),
            runs: Self::default_runs(),
            n: Self::default_n(),
            horizon: Self::default_horizon(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSection,
    pub kernel: Family,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub reaction: ReactionSection,
    pub grid: GridSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub verify: VerifySection,
}

/// 1-based line and column of a byte offset.
fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

impl ExperimentConfig {
    /// Parses and validates a TOML document. Syntax and type errors carry
    /// the line and column of the offending item.
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(src, span.start);
                    Error::Config(format!("line {line}, column {col}: {msg}"))
                }
                None => Error::Config(msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything a run needs up front; sweep families are left to
    /// their own rows.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.params().map_err(cfg_err)?;
        let kernel = self.kernel().map_err(cfg_err)?;
        self.reaction().map_err(cfg_err)?;
        let grid = self.grid().map_err(cfg_err)?;
        self.initial_field(&kernel, &grid).map_err(cfg_err)?;
        let bad = |m: String| Err(Error::Config(m));
        let r = &self.run;
        if !(r.horizon > 0.0 && r.horizon.is_finite()) || !(r.snapshot_dt > 0.0) {
            return bad("run: horizon and snapshot_dt must be positive".into());
        }
        if r.levels.is_empty() || r.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return bad("run: levels must be fractions in (0, 1)".into());
        }
        if let Some(d) = r.field_dump_dt {
            if !(d > 0.0) {
                return bad("run: field_dump_dt must be positive".into());
            }
        }
        let v = &self.verify;
        if v.runs == 0 || v.n < 8 || !(v.horizon > 0.0) {
            return bad("verify: need runs ≥ 1, n ≥ 8 and a positive horizon".into());
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.model.kappa, self.model.m)
    }

    pub fn beta(&self) -> f64 {
        self.model.kappa - self.model.m
    }

    pub fn kernel(&self) -> Result<Kernel> {
        self.kernel_for(&self.kernel)
    }

    /// The normalized kernel of `family` in this configuration's dimension.
    pub fn kernel_for(&self, family: &Family) -> Result<Kernel> {
        normalize_kernel(&build_profile(family.clone())?, self.grid.dim)
    }

    pub fn reaction(&self) -> Result<ReactionSpec> {
        let r = &self.reaction;
        let comp = match &r.competition {
            Some(f) => Some(self.kernel_for(f)?),
            None => None,
        };
        let local = if r.alpha > 0.0 { r.local } else { LocalTerm::None };
        Ok(ReactionSpec::new(r.alpha, r.k, local, self.model.theta, self.beta(), comp)?.with_nu_scale(r.nu_scale))
    }

    pub fn grid(&self) -> Result<Grid> {
        if self.grid.dim == 0 || self.grid.dim > 2 {
            return Err(Error::Config(format!("grid: dim = {} must be 1 or 2", self.grid.dim)));
        }
        Grid::new(self.grid.dim, self.grid.half_width, self.grid.n)
    }

    pub fn ic_class(&self) -> IcClass {
        match self.initial {
            InitialCondition::Bump { .. } => IcClass::Integrable,
            _ => IcClass::Monotone,
        }
    }

    pub fn crossing_mode(&self) -> CrossingMode {
        match self.initial {
            InitialCondition::Bump { .. } => CrossingMode::Radial,
            InitialCondition::Plateau { .. } => CrossingMode::Monotone,
            InitialCondition::OrthantIntegral { .. } => CrossingMode::Diagonal,
        }
    }

    pub fn initial_field(&self, kernel: &Kernel, grid: &Grid) -> Result<Field> {
        let theta = self.model.theta;
        let height = |h: f64| {
            if (0.0..=1.0).contains(&h) {
                Ok(h * theta)
            } else {
                Err(Error::Config(format!("initial: height {h} must lie in [0, 1]")))
            }
        };
        match (self.initial.clone(), grid.dim()) {
            (InitialCondition::Bump { height: h, radius }, _) => {
                let h = height(h)?;
                if !(radius > 0.0) {
                    return Err(Error::Config("initial: bump radius must be positive".into()));
                }
                Ok(sample_field(grid, |x| {
                    let r2: f64 = x.iter().map(|v| v * v).sum();
                    if r2 <= radius * radius {
                        h
                    } else {
                        0.0
                    }
                }))
            }
            (InitialCondition::Plateau { height: h, edge }, 1) => {
                let h = height(h)?;
                Ok(sample_field(grid, |x| if x[0] <= edge { h } else { 0.0 }))
            }
            (InitialCondition::OrthantIntegral { height: h }, 2) => {
                let h = height(h)?;
                let mut f = sample_orthant_integral(grid, |x| kernel.eval(x));
                f.values_mut().iter_mut().for_each(|v| *v = (*v * h).min(h));
                Ok(f)
            }
            (InitialCondition::Plateau { .. }, _) => Err(Error::Config("initial: plateau data need dim = 1".into())),
            (InitialCondition::OrthantIntegral { .. }, _) => {
                Err(Error::Config("initial: orthant-integral data need dim = 2".into()))
            }
        }
    }

    pub fn policy(&self) -> DomainPolicy {
        let mut p = DomainPolicy::for_dim(self.grid.dim);
        let g = &self.grid;
        if let Some(v) = g.n_cap {
            p.n_cap = v;
        }
        if let Some(v) = g.expand_threshold {
            p.expand_threshold = v;
        }
        if let Some(v) = g.max_half_width {
            p.max_half_width = v;
        }
        p.fill = g.fill;
        p
    }

    /// A fresh simulation with this configuration's kernel.
    pub fn build_state(&self) -> Result<SimState> {
        self.build_state_with(self.kernel()?)
    }

    pub fn build_state_with(&self, kernel: Kernel) -> Result<SimState> {
        let grid = self.grid()?;
        let u0 = self.initial_field(&kernel, &grid)?;
        SimState::new(self.params()?, self.reaction()?, kernel, u0, self.ic_class(), self.policy())
    }

    /// Predicted front position at `t` for `family`: `η(t)` for bumps, the
    /// orthant level-set radius for plateaus and the upper diagonal bound
    /// for orthant data. `None` where the law is undefined.
    pub fn predicted_front(&self, family: &Family, t: f64) -> Option<f64> {
        let profile = build_profile(family.clone()).ok()?;
        let beta = self.beta();
        match self.initial {
            InitialCondition::Bump { .. } => predicted_eta(&profile, beta, t).ok(),
            InitialCondition::Plateau { .. } => {
                let spec = LevelSetSpec::new(LevelShape::Orthant, profile, beta, 1).ok()?;
                lambda_radius(&spec, t).ok()
            }
            InitialCondition::OrthantIntegral { .. } => diagonal_front_bounds(&profile, beta, t, 0.25).ok().map(|b| b.1),
        }
    }

    /// Output directory: the command-line override, then `run.output`.
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        cli.map(Path::to_path_buf)
            .or_else(|| self.run.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 3

[model]
kappa = 1.5
m = 0.5

[kernel]
family = "polynomial"
m = 1.0
mu = 1.0
d = 1

[grid]
dim = 1
half_width = 32.0
n = 256
fill = "tail-shape"

[run]
horizon = 10.0
"#;

    #[test]
    fn parses_defaults_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(BASIC).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.initial, InitialCondition::default());
        assert_eq!(cfg.run.levels, vec![0.1, 0.5, 0.9]);
        assert_eq!(cfg.verify.suites.len(), Suite::ALL.len());
        assert_eq!(cfg.crossing_mode(), CrossingMode::Radial);
        assert_eq!(cfg.policy().fill, ExpansionFill::TailShape);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn errors_carry_line_numbers() {
        // Tagged tables report the table header.
        let broken = BASIC.replace("mu = 1.0", "mu = \"one\"");
        match ExperimentConfig::from_toml_str(&broken) {
            Err(Error::Config(m)) => assert!(m.starts_with("line 8,"), "{m}"),
            other => panic!("{other:?}"),
        }
        let typo = BASIC.replace("horizon", "horizn");
        match ExperimentConfig::from_toml_str(&typo) {
            Err(Error::Config(m)) => assert!(m.contains("line 21") && m.contains("horizn"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_checks() {
        let neg_beta = BASIC.replace("m = 0.5", "m = 2.0");
        assert!(matches!(ExperimentConfig::from_toml_str(&neg_beta), Err(Error::Config(_))));
        let plateau_2d = BASIC.replace("dim = 1", "dim = 2").replace("d = 1", "d = 2") + "\n[initial]\nkind = \"plateau\"\n";
        assert!(matches!(ExperimentConfig::from_toml_str(&plateau_2d), Err(Error::Config(_))));
        let tall = BASIC.to_string() + "\n[initial]\nkind = \"bump\"\nheight = 2.0\n";
        assert!(matches!(ExperimentConfig::from_toml_str(&tall), Err(Error::Config(_))));
    }

    #[test]
    fn predicted_fronts_by_initial_class() {
        let mut cfg = ExperimentConfig::from_toml_str(BASIC).unwrap();
        let fam = cfg.kernel.clone();
        let bump = cfg.predicted_front(&fam, 10.0).unwrap();
        assert!((bump - (5f64.exp() - 1.0)).abs() < 1e-9);
        cfg.initial = InitialCondition::Plateau { height: 1.0, edge: 0.0 };
        let plateau = cfg.predicted_front(&fam, 10.0).unwrap();
        assert!((plateau - (10f64.exp() - 1.0)).abs() < 1e-6 * plateau);
    }
}
