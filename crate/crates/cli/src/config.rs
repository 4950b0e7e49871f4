use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qlinv_core::inversion::{InversionConfig, Shift};
use qlinv_core::{BoundaryHats, BoundarySet, RhsKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Relative Gauss-Newton shift (multiple of the mean normal-matrix diagonal)
/// used by the inversion experiments.
pub const NOISY_DATA_SHIFT: f64 = 1e-2;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    CorrectorDecay,
    ForwardConvergence,
    InvertFull,
    InvertPartial,
    Simulate,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CorrectorDecay => "corrector-decay",
            Self::ForwardConvergence => "forward-convergence",
            Self::InvertFull => "invert-full",
            Self::InvertPartial => "invert-partial",
            Self::Simulate => "simulate",
        })
    }
}

/// Cells per axis of the three nested meshes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub dim: usize,
    pub coarse_cells: usize,
    pub eps_cells: usize,
    pub fine_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub coefficient_range: [f64; 2],
    pub coefficient_seed: u64,
    pub rhs: RhsKind,
    pub noise: f64,
    pub noise_seed: u64,
    pub boundary: BoundarySet,
    pub boundary_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            coefficient_range: [1.0, 50.0],
            coefficient_seed: 1,
            rhs: RhsKind::Unit,
            noise: 0.0,
            noise_seed: 2,
            boundary: BoundarySet::FullBasis,
            boundary_seed: 3,
        }
    }
}

/// Starting matrix of the reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialGuess {
    /// Coarse stiffness matrix of the unit coefficient.
    UnitCoefficient,
    /// Coarse stiffness matrix of a random coefficient on the coarse mesh.
    RandomCoefficient { lo: f64, hi: f64, seed: u64 },
}

/// Boundary data for `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum U0Spec {
    Zero,
    Constant(f64),
    /// Trace of the coordinate `x_1`.
    X1,
    /// One value per coarse boundary node, one per line.
    File(PathBuf),
}

impl FromStr for U0Spec {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        if s == "zero" {
            return Ok(Self::Zero);
        }
        if s == "x1" {
            return Ok(Self::X1);
        }
        if let Some(v) = s.strip_prefix("const:") {
            return v
                .parse()
                .map(Self::Constant)
                .map_err(|_| CliError::Config(format!("bad constant in u0 spec '{s}'")));
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(p)));
        }
        Err(CliError::Config(format!("unknown u0 spec '{s}' (zero | x1 | const:<c> | file:<path>)")))
    }
}

impl TryFrom<String> for U0Spec {
    type Error = CliError;

    fn try_from(s: String) -> CliResult<Self> {
        s.parse()
    }
}

impl From<U0Spec> for String {
    fn from(u: U0Spec) -> String {
        match u {
            U0Spec::Zero => "zero".into(),
            U0Spec::X1 => "x1".into(),
            U0Spec::Constant(c) => format!("const:{c}"),
            U0Spec::File(p) => format!("file:{}", p.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub matrices: Vec<PathBuf>,
    pub rhs: Vec<RhsKind>,
    pub u0: U0Spec,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { matrices: Vec::new(), rhs: vec![RhsKind::G1, RhsKind::G2], u0: U0Spec::Zero }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub experiment: Experiment,
    pub mesh: MeshConfig,
    pub ells: Vec<usize>,
    /// Coarse cells per axis for the forward convergence sweep.
    #[serde(default)]
    pub coarse_levels: Vec<usize>,
    #[serde(default)]
    pub hats: BoundaryHats,
    #[serde(default)]
    pub inversion: InversionConfig,
    /// Adds a randomized-direction variant next to the full-data run.
    #[serde(default)]
    pub randomized_fraction: Option<f64>,
    #[serde(default)]
    pub synth: SynthConfig,
    pub initial: InitialGuess,
    #[serde(default)]
    pub simulate: SimulateConfig,
    /// Output directory; omitted from manifests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Desk-scale defaults, or the large-scale resolutions with `paper_scale`.
    pub fn defaults(experiment: Experiment, paper_scale: bool) -> Self {
        // With 5% noise and nearly as many unknowns as data at ell = 2, the
        // library's tiny default shift produces erratic steps.
        let noisy_inversion = InversionConfig { shift: Shift::Relative(NOISY_DATA_SHIFT), ..InversionConfig::default() };
        let inverse_mesh = if paper_scale {
            MeshConfig { dim: 2, coarse_cells: 32, eps_cells: 128, fine_cells: 512 }
        } else {
            MeshConfig { dim: 2, coarse_cells: 16, eps_cells: 64, fine_cells: 128 }
        };
        let mut cfg = Self {
            format_version: FORMAT_VERSION,
            experiment,
            mesh: inverse_mesh,
            ells: vec![0, 1, 2, 3],
            coarse_levels: Vec::new(),
            hats: BoundaryHats::default(),
            inversion: InversionConfig::default(),
            randomized_fraction: None,
            synth: SynthConfig::default(),
            initial: InitialGuess::UnitCoefficient,
            simulate: SimulateConfig::default(),
            output: None,
        };
        match experiment {
            Experiment::CorrectorDecay => {
                cfg.mesh = MeshConfig { dim: 1, coarse_cells: 16, eps_cells: 512, fine_cells: 512 };
                cfg.ells = (0..=16).collect();
            }
            Experiment::ForwardConvergence => {
                cfg.mesh = if paper_scale {
                    MeshConfig { dim: 2, coarse_cells: 32, eps_cells: 128, fine_cells: 512 }
                } else {
                    MeshConfig { dim: 2, coarse_cells: 32, eps_cells: 64, fine_cells: 256 }
                };
                cfg.coarse_levels = vec![4, 8, 16, 32];
                cfg.ells = vec![2];
            }
            Experiment::InvertFull => {
                cfg.synth.noise = 0.05;
                cfg.inversion = noisy_inversion;
            }
            Experiment::InvertPartial => {
                cfg.synth.noise = 0.05;
                cfg.inversion = noisy_inversion;
                cfg.synth.boundary = BoundarySet::Random { q: if paper_scale { 40 } else { 24 } };
                cfg.randomized_fraction = Some(0.5);
                cfg.initial = InitialGuess::RandomCoefficient { lo: 0.1, hi: 10.0, seed: 4 };
            }
            Experiment::Simulate => {
                cfg.ells = Vec::new();
            }
        }
        cfg
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{}", self.experiment)))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if cfg.format_version != FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                cfg.format_version
            )));
        }
        Ok(cfg)
    }

    /// Derives every seed from one value.
    pub fn reseed(&mut self, seed: u64) {
        self.synth.coefficient_seed = seed;
        self.synth.noise_seed = seed.wrapping_add(1);
        self.synth.boundary_seed = seed.wrapping_add(2);
        self.inversion.seed = seed.wrapping_add(3);
        if let InitialGuess::RandomCoefficient { seed: s, .. } = &mut self.initial {
            *s = seed.wrapping_add(4);
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let m = &self.mesh;
        if m.dim != 1 && m.dim != 2 {
            return bad(format!("dimension {} is not 1 or 2", m.dim));
        }
        let nested = |a: usize, b: usize| a > 0 && b.is_multiple_of(a) && (b / a).is_power_of_two();
        if !nested(m.coarse_cells, m.eps_cells) || !nested(m.eps_cells, m.fine_cells) {
            return bad(format!(
                "meshes must be nested with power-of-two ratios: coarse {} <= eps {} <= fine {}",
                m.coarse_cells, m.eps_cells, m.fine_cells
            ));
        }
        if let Some(&c) = self.coarse_levels.iter().find(|&&c| !nested(c, m.fine_cells) || !nested(c, m.eps_cells)) {
            return bad(format!("coarse level {c} does not nest in the eps and fine meshes"));
        }
        if let Some(f) = self.randomized_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("randomized fraction {f} outside (0, 1]"));
            }
        }
        let [lo, hi] = self.synth.coefficient_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("invalid coefficient range [{lo}, {hi}]"));
        }
        if !(self.synth.noise >= 0.0) {
            return bad("noise must be nonnegative".into());
        }
        let needs_ells = matches!(
            self.experiment,
            Experiment::CorrectorDecay | Experiment::ForwardConvergence | Experiment::InvertFull | Experiment::InvertPartial
        );
        if needs_ells && self.ells.is_empty() {
            return bad("ell list is empty".into());
        }
        match self.experiment {
            Experiment::CorrectorDecay if m.dim != 1 || m.fine_cells < 512 => {
                bad("corrector decay runs in 1D with at least 512 fine cells".into())
            }
            Experiment::ForwardConvergence if self.coarse_levels.is_empty() => bad("no coarse levels given".into()),
            Experiment::Simulate if self.simulate.matrices.is_empty() => bad("simulate needs --matrix".into()),
            _ => Ok(()),
        }
        .and_then(|_| self.inversion.validate().map_err(|e| CliError::Config(e.to_string())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        for e in [
            Experiment::CorrectorDecay,
            Experiment::ForwardConvergence,
            Experiment::InvertFull,
            Experiment::InvertPartial,
        ] {
            for paper in [false, true] {
                let cfg = ExperimentConfig::defaults(e, paper);
                cfg.validate().unwrap();
                let json = serde_json::to_string(&cfg).unwrap();
                let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
                assert_eq!(back, cfg);
            }
        }
        let sim = ExperimentConfig::defaults(Experiment::Simulate, false);
        assert!(matches!(sim.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn rejects_non_nested_meshes() {
        let mut cfg = ExperimentConfig::defaults(Experiment::InvertFull, false);
        cfg.mesh.eps_cells = 48;
        assert!(cfg.validate().is_err());
        cfg.mesh.eps_cells = 8;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn u0_specs() {
        assert_eq!("zero".parse::<U0Spec>().unwrap(), U0Spec::Zero);
        assert_eq!("const:2.5".parse::<U0Spec>().unwrap(), U0Spec::Constant(2.5));
        assert_eq!("file:a/b.csv".parse::<U0Spec>().unwrap(), U0Spec::File("a/b.csv".into()));
        assert!("const:x".parse::<U0Spec>().is_err());
        assert!("sine".parse::<U0Spec>().is_err());
        let s: String = U0Spec::Constant(-1.0).into();
        assert_eq!(s.parse::<U0Spec>().unwrap(), U0Spec::Constant(-1.0));
    }

    #[test]
    fn reseed_changes_every_seed() {
        let mut cfg = ExperimentConfig::defaults(Experiment::InvertPartial, false);
        cfg.reseed(100);
        assert_eq!(cfg.synth.coefficient_seed, 100);
        assert_eq!(cfg.inversion.seed, 103);
        assert_eq!(cfg.initial, InitialGuess::RandomCoefficient { lo: 0.1, hi: 10.0, seed: 104 });
    }
}
