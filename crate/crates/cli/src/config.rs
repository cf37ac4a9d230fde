//! Experiment configuration files.

use std::path::{Path, PathBuf};

use ga_tradeoff::ga::GaConfig;
use ga_tradeoff::problems::ar::SamplingFit;
use ga_tradeoff::problems::ProblemKind;
use ga_tradeoff::rate::{CANDIDATE_EXPONENTS, DEFAULT_BURN_IN};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaSection {
    pub population_size: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub generations: usize,
}

impl Default for GaSection {
    fn default() -> Self {
        Self { population_size: 50, crossover_rate: 0.7, mutation_rate: 0.1, generations: 700 }
    }
}

impl GaSection {
    pub fn to_ga_config(&self) -> GaConfig {
        GaConfig {
            population_size: self.population_size,
            crossover_rate: self.crossover_rate,
            mutation_rate: self.mutation_rate,
            generations: self.generations,
            ..GaConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarlo {
    /// Samples for the sampling variance.
    pub replications: usize,
    /// Fixed datasets for the GA variance.
    pub datasets: usize,
    /// GA runs per dataset.
    pub runs: usize,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self { replications: 2000, datasets: 10, runs: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    pub candidates: Vec<f64>,
    pub burn_in: usize,
}

impl Default for RateSection {
    fn default() -> Self {
        Self { candidates: CANDIDATE_EXPONENTS.to_vec(), burn_in: DEFAULT_BURN_IN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRatio {
    pub problem: ProblemKind,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub budget: f64,
    /// Single cost point used by `tradeoff`.
    pub s: f64,
    pub t: f64,
    pub s_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// S grid and base T for the timed comparison.
    pub timed_s_grid: Vec<f64>,
    pub timed_t_base: f64,
    /// Per-problem T relative to GK; measured when empty.
    pub t_ratios: Vec<TimeRatio>,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            budget: 1e5,
            s: 1.0,
            t: 1.0,
            s_grid: vec![0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
            t_grid: vec![0.001, 0.01, 0.1, 1.0, 10.0],
            timed_s_grid: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0],
            timed_t_base: 1.0,
            t_ratios: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateSection {
    pub repetitions: usize,
    pub sizes: Vec<usize>,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self { repetitions: 200, sizes: vec![200] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArSection {
    pub sampling_fit: SamplingFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub problems: Vec<ProblemKind>,
    pub n: usize,
    pub seed: u64,
    /// Output directory; not part of the config hash.
    pub out: PathBuf,
    pub ga: GaSection,
    pub monte_carlo: MonteCarlo,
    pub rate: RateSection,
    pub cost: CostSection,
    pub calibrate: CalibrateSection,
    pub ar: ArSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            problems: ProblemKind::ALL.to_vec(),
            n: 200,
            seed: 1,
            out: PathBuf::from("out"),
            ga: GaSection::default(),
            monte_carlo: MonteCarlo::default(),
            rate: RateSection::default(),
            cost: CostSection::default(),
            calibrate: CalibrateSection::default(),
            ar: ArSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Overrides the Monte Carlo sizes and generation count.
    pub fn apply_scale(&mut self, scale: Scale) {
        let (r, j, g) = match scale {
            Scale::Desk => (2000, 100, 700),
            Scale::Paper => (10000, 500, 1400),
        };
        self.monte_carlo.replications = r;
        self.monte_carlo.datasets = 10;
        self.monte_carlo.runs = j;
        self.ga.generations = g;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.problems.is_empty() {
            return bad("no problems selected".into());
        }
        let mc = &self.monte_carlo;
        if self.n == 0 || mc.datasets == 0 || self.calibrate.sizes.contains(&0) {
            return bad("sample sizes and dataset counts must be positive".into());
        }
        if mc.replications < 2 || mc.runs < 2 {
            return bad("replications and runs per dataset must be at least 2".into());
        }
        self.ga.to_ga_config().validate_for_convergence().map_err(|e| CliError::Config(e.to_string()))?;
        if self.rate.candidates.is_empty() || self.rate.candidates.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return bad("rate candidates must be positive".into());
        }
        let c = &self.cost;
        let positive = |v: &[f64]| !v.is_empty() && v.iter().all(|&x| x > 0.0 && x.is_finite());
        if !positive(&[c.budget, c.s, c.t, c.timed_t_base]) || !positive(&c.s_grid) || !positive(&c.t_grid) || !positive(&c.timed_s_grid) {
            return bad("costs must be positive and grids nonempty".into());
        }
        if c.t_ratios.iter().any(|r| !(r.ratio > 0.0 && r.ratio.is_finite())) {
            return bad("time ratios must be positive".into());
        }
        if self.calibrate.repetitions < 100 {
            return bad("calibration needs at least 100 repetitions".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization with the output directory
    /// cleared, as 16 hex digits.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
