//! Experiment configuration.
//!
//! One TOML file fully determines one experiment:
//!
//! ```toml
//! function = "I_13_12"
//! train_count = 20000
//! val_count = 20000
//! seeds = [1, 2, 3]
//! tol = 0.0                              # stop once validation MSE <= tol
//! train_domain = [[1.0, 5.0], [1.0, 5.0]] # optional; function default
//! eval_domain = [[1.1, 4.9], [1.1, 4.9]]  # optional; same as train_domain
//! output_dir = "runs/i13"
//!
//! [network]
//! depth = 5                  # hidden layers in every network
//! initial_width = 5
//! schedule = [5, 5, 5, 5]    # one refinement network per entry
//! loss = "mse"               # or "wmse"  (refinements only)
//! sampling = "full"          # or "weighted"
//! # resample_count = 20000
//! standardize_inputs = false
//! reduction = "sequential"   # or "parallel"
//!
//! [optimizer]
//! max_iterations = 2000
//! gradient_tolerance = 1e-12
//! wolfe_c1 = 1e-4
//! wolfe_c2 = 0.9
//!
//! [patch]                    # optional
//! radius = 0.75
//! widths = [16, 16]
//! max_iterations = 2000
//!
//! [data]                     # optional; read CSVs instead of sampling
//! train = "train.csv"
//! val = "val.csv"
//! ```
//!
//! Manifests written next to every artifact are configs too (with an extra
//! `[provenance]` table that is ignored on input).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hiprenet_core::{
    BfgsOptions, Domain, FunctionId, LossKind, MlpArchitecture, Reduction, Sampling, StageConfig, TrainPlan,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: &str = concat!("hiprenet ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub function: String,
    #[serde(default = "default_count")]
    pub train_count: usize,
    #[serde(default = "default_count")]
    pub val_count: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_domain: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_domain: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<PatchSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_width")]
    pub initial_width: usize,
    #[serde(default = "default_schedule")]
    pub schedule: Vec<usize>,
    #[serde(default = "default_loss")]
    pub loss: String,
    #[serde(default = "default_sampling")]
    pub sampling: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resample_count: Option<usize>,
    #[serde(default)]
    pub standardize_inputs: bool,
    #[serde(default = "default_reduction")]
    pub reduction: String,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            depth: default_depth(),
            initial_width: default_width(),
            schedule: default_schedule(),
            loss: default_loss(),
            sampling: default_sampling(),
            resample_count: None,
            standardize_inputs: false,
            reduction: default_reduction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_line_search_steps: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = BfgsOptions::default();
        Self {
            max_iterations: o.max_iterations,
            gradient_tolerance: o.gradient_tolerance,
            wolfe_c1: o.wolfe_c1,
            wolfe_c2: o.wolfe_c2,
            max_line_search_steps: o.max_line_search_steps,
        }
    }
}

impl OptimizerSection {
    pub fn options(&self) -> BfgsOptions {
        BfgsOptions {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            wolfe_c1: self.wolfe_c1,
            wolfe_c2: self.wolfe_c2,
            max_line_search_steps: self.max_line_search_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSection {
    pub radius: f64,
    #[serde(default = "default_patch_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_patch_iterations")]
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    pub val: PathBuf,
}

/// Written into manifests; ignored when a manifest is read back as a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_count() -> usize {
    20_000
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("hiprenet-out")
}
fn default_depth() -> usize {
    5
}
fn default_width() -> usize {
    5
}
fn default_schedule() -> Vec<usize> {
    vec![5, 5, 5]
}
fn default_loss() -> String {
    "mse".into()
}
fn default_sampling() -> String {
    "full".into()
}
fn default_reduction() -> String {
    "sequential".into()
}
fn default_patch_widths() -> Vec<usize> {
    vec![16, 16]
}
fn default_patch_iterations() -> usize {
    2000
}

fn to_domain(bounds: &[[f64; 2]], what: &str) -> Result<Domain> {
    Domain::new(bounds.iter().map(|b| (b[0], b[1])).collect())
        .map_err(|e| CliError::Config(format!("{what}: {e}")))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|source| CliError::ConfigSyntax {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.function_id()?;
        if self.train_count == 0 || self.val_count == 0 {
            return Err(CliError::Config("train_count and val_count must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must list at least one seed".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(CliError::Config("tol must be a nonnegative number".into()));
        }
        for dom in [self.train_domain()?, self.eval_domain()?] {
            if dom.dim() != id.dim() {
                return Err(CliError::Config(format!(
                    "{id} takes {} variables but a domain has {}",
                    id.dim(),
                    dom.dim()
                )));
            }
        }
        if self.network.depth == 0 || self.network.initial_width == 0 || self.network.schedule.contains(&0) {
            return Err(CliError::Config("network widths and depth must be at least 1".into()));
        }
        self.loss()?;
        self.sampling()?;
        self.reduction()?;
        self.optimizer.options().validate()?;
        if let Some(p) = &self.patch {
            if !(p.radius > 0.0 && p.radius.is_finite()) {
                return Err(CliError::Config("patch.radius must be positive".into()));
            }
            if p.widths.is_empty() || p.widths.contains(&0) || p.max_iterations == 0 {
                return Err(CliError::Config("patch.widths and patch.max_iterations must be positive".into()));
            }
        }
        for cfg in self.plan()?.schedule {
            cfg.validate()?;
        }
        Ok(())
    }

    pub fn function_id(&self) -> Result<FunctionId> {
        self.function.parse().map_err(|e| CliError::Config(format!("{e}")))
    }

    pub fn train_domain(&self) -> Result<Domain> {
        match &self.train_domain {
            Some(b) => to_domain(b, "train_domain"),
            None => Ok(self.function_id()?.default_domain()),
        }
    }

    pub fn eval_domain(&self) -> Result<Domain> {
        match &self.eval_domain {
            Some(b) => to_domain(b, "eval_domain"),
            None => self.train_domain(),
        }
    }

    pub fn loss(&self) -> Result<LossKind> {
        LossKind::from_name(&self.network.loss)
            .ok_or_else(|| CliError::Config(format!("unknown loss `{}` (mse, wmse)", self.network.loss)))
    }

    pub fn sampling(&self) -> Result<Sampling> {
        Sampling::from_name(&self.network.sampling).ok_or_else(|| {
            CliError::Config(format!("unknown sampling `{}` (full, weighted)", self.network.sampling))
        })
    }

    pub fn reduction(&self) -> Result<Reduction> {
        match self.network.reduction.as_str() {
            "sequential" => Ok(Reduction::Sequential),
            "parallel" => Ok(Reduction::Parallel),
            other => Err(CliError::Config(format!("unknown reduction `{other}` (sequential, parallel)"))),
        }
    }

    pub fn plan(&self) -> Result<TrainPlan> {
        let net = &self.network;
        let stage = |width: usize| StageConfig {
            hidden_widths: vec![width; net.depth],
            loss: LossKind::Mse,
            optimizer: self.optimizer.options(),
            sampling: Sampling::Full,
            resample_count: net.resample_count,
            reduction: Reduction::Sequential,
        };
        let reduction = self.reduction()?;
        let mut initial = stage(net.initial_width);
        initial.reduction = reduction;
        let (loss, sampling) = (self.loss()?, self.sampling()?);
        let schedule = net
            .schedule
            .iter()
            .map(|&w| StageConfig {
                loss,
                sampling,
                reduction,
                ..stage(w)
            })
            .collect();
        Ok(TrainPlan {
            initial,
            schedule,
            tol: self.tol,
            standardize_inputs: net.standardize_inputs,
        })
    }

    pub fn patch_architecture(&self) -> Result<Option<(f64, MlpArchitecture, BfgsOptions)>> {
        let Some(p) = &self.patch else { return Ok(None) };
        let arch = MlpArchitecture::new(self.function_id()?.dim(), p.widths.clone())?;
        let opts = self.optimizer.options().with_max_iterations(p.max_iterations);
        Ok(Some((p.radius, arch, opts)))
    }

    /// SHA-256 over the settings that determine results: everything except
    /// the seed list, the output directory and provenance.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.seeds.clear();
        canon.output_dir = PathBuf::new();
        canon.provenance = None;
        let digest = Sha256::digest(canon.to_toml().as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            write!(hex, "{b:02x}").unwrap();
        }
        hex
    }

    /// Config restricted to one seed, stamped with provenance; reading it
    /// back reproduces that seed's run.
    pub fn manifest(&self, seed: u64) -> ExperimentConfig {
        let mut m = self.clone();
        m.seeds = vec![seed];
        m.provenance = Some(Provenance {
            version: FORMAT_VERSION.into(),
            config_hash: self.hash(),
            seed: Some(seed),
        });
        m
    }
}
