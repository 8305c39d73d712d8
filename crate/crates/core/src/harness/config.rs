//! Experiment configuration: a flat key-value file (TOML syntax) with a fixed
//! key order, so the serialized form doubles as a canonical fingerprint input.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionKind, Aggregation};
use crate::data::BoxSet;
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::model::{Activation, Dims, NetSpec};
use crate::path::{MetricWeight, PathGrid, PathMode};
use crate::plants::oscillator::OscillatorParams;
use crate::training::{TrainConfig, X0Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantTag {
    Oscillator,
    Tanks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    None,
    Gradient,
    Manifold,
    Multishoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionTag {
    Qlpv,
    Ltv,
    Ideal,
    Fisher,
    Random,
}

impl AcquisitionTag {
    pub fn label(self) -> &'static str {
        match self {
            AcquisitionTag::Qlpv => "qlpv",
            AcquisitionTag::Ltv => "ltv",
            AcquisitionTag::Ideal => "ideal",
            AcquisitionTag::Fisher => "fisher",
            AcquisitionTag::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantTag,
    pub n_x: usize,
    pub n_p: usize,
    pub net_width: usize,
    pub activation: Activation,
    pub horizon: usize,
    pub n_initial: usize,
    pub n_max: usize,
    pub pool_size: usize,
    pub test_size: usize,
    pub reg_base: usize,
    pub path_segments: usize,
    pub path_mode: PathMode,
    pub w_u: f64,
    pub w_y: f64,
    pub epsilon_u: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub regularizer: RegularizerKind,
    pub acquisition: AcquisitionTag,
    pub aggregation: Aggregation,
    pub adam_iters: usize,
    pub adam_step: f64,
    pub bfgs_max_iters: usize,
    pub bfgs_grad_tol: f64,
    pub seeds: Vec<u64>,
    pub pilot_size: usize,
    pub scaler_seed: u64,
    pub substeps: usize,
    pub shoot_len: usize,
    pub shoot_samples: usize,
    pub x0_prefix: usize,
    pub tanks_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        ExperimentConfig {
            plant: PlantTag::Oscillator,
            n_x: 4,
            n_p: 3,
            net_width: 4,
            activation: Activation::Swish,
            horizon: 10,
            n_initial: 5,
            n_max: 10,
            pool_size: 150,
            test_size: 200,
            reg_base: 20,
            path_segments: 10,
            path_mode: PathMode::Chord,
            w_u: 1.0,
            w_y: 1.0,
            epsilon_u: 1.0,
            kappa1: 1e-4,
            kappa2: 0.01,
            regularizer: RegularizerKind::Manifold,
            acquisition: AcquisitionTag::Ltv,
            aggregation: Aggregation::Sum,
            adam_iters: train.adam_iters,
            adam_step: train.adam_step,
            bfgs_max_iters: train.bfgs_max_iters,
            bfgs_grad_tol: train.bfgs_grad_tol,
            seeds: vec![0, 1, 2],
            pilot_size: 100,
            scaler_seed: 0,
            substeps: OscillatorParams::default().substeps,
            shoot_len: 64,
            shoot_samples: 20,
            x0_prefix: 64,
            tanks_dir: PathBuf::from("data/tanks"),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// `(key, type, description)` for every configuration key, in file order.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("plant", "oscillator|tanks", "ground-truth system"),
    ("n_x", "int", "model state dimension"),
    ("n_p", "int", "number of scheduling modes"),
    ("net_width", "int", "hidden units per scheduling channel"),
    ("activation", "swish|tanh", "hidden-layer activation"),
    ("horizon", "int", "trajectory length T (oscillator)"),
    ("n_initial", "int", "initial dataset size N_d"),
    ("n_max", "int", "final dataset size N_max"),
    ("pool_size", "int", "candidate pool size"),
    ("test_size", "int", "test set size"),
    ("reg_base", "int", "test trajectories kept as the fixed regularization base"),
    ("path_segments", "int", "path discretization M"),
    ("path_mode", "chord|literal", "output increments of the exact path length"),
    ("w_u", "float", "metric weight on input increments"),
    ("w_y", "float", "metric weight on output increments"),
    ("epsilon_u", "float", "neighborhood radius around dataset inputs"),
    ("kappa1", "float", "L2 weight"),
    ("kappa2", "float", "scheduling-smoothness weight"),
    ("regularizer", "none|gradient|manifold|multishoot", "smoothness penalty"),
    ("acquisition", "qlpv|ltv|ideal|fisher|random", "acquisition function"),
    ("aggregation", "sum|min", "combination of per-point path lengths"),
    ("adam_iters", "int", "Adam iterations per training"),
    ("adam_step", "float", "Adam step size"),
    ("bfgs_max_iters", "int", "BFGS iteration cap"),
    ("bfgs_grad_tol", "float", "BFGS gradient tolerance (max norm)"),
    ("seeds", "[int]", "one run per seed"),
    ("pilot_size", "int", "trajectories used to fit the output scaling"),
    ("scaler_seed", "int", "seed of the scaling pilot batch"),
    ("substeps", "int", "RK4 steps per sampling period"),
    ("shoot_len", "int", "multiple-shooting interval length (tanks)"),
    ("shoot_samples", "int", "neighborhood samples per shooting interval (tanks)"),
    ("x0_prefix", "int", "samples used to estimate the test initial state (tanks)"),
    ("tanks_dir", "path", "directory with train.csv and test.csv (tanks)"),
    ("output_dir", "path", "artifact directory"),
];

/// Keys that locate files and do not change results.
const LOCATION_KEYS: &[&str] = &["tanks_dir", "output_dir"];

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text` after replacing keys with `key=value` overrides.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("override '{o}' is not key=value")))?;
            let (k, v) = (k.trim(), v.trim());
            if !SCHEMA.iter().any(|(key, _, _)| *key == k) {
                return Err(Error::Parse(format!("unknown configuration key '{k}'")));
            }
            // bare words are taken as strings
            let value = match format!("v = {v}").parse::<toml::Table>() {
                Ok(mut t) => t.remove("v").unwrap(),
                Err(_) => toml::Value::String(v.to_string()),
            };
            table.insert(k.to_string(), value);
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with(&text, overrides)
    }

    /// The configuration with every key present, in schema order.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("flat configuration serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical text without the
    /// location keys.
    pub fn fingerprint(&self) -> String {
        let text: String = self
            .canonical()
            .lines()
            .filter(|l| !LOCATION_KEYS.iter().any(|k| l.starts_with(&format!("{k} ="))))
            .map(|l| format!("{l}\n"))
            .collect();
        sha256_hex(text.as_bytes())[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.into()));
        self.dims()?;
        if self.net_width == 0 || self.horizon == 0 || self.path_segments == 0 {
            return bad("net_width, horizon and path_segments must be positive");
        }
        if self.n_initial == 0 || self.n_max < self.n_initial {
            return bad("need 0 < n_initial <= n_max");
        }
        if self.reg_base + self.pool_size > self.test_size {
            return bad("reg_base + pool_size exceeds test_size");
        }
        if self.plant == PlantTag::Oscillator && self.pool_size < self.n_max - self.n_initial {
            return bad("pool smaller than the number of acquisitions");
        }
        if !(self.kappa1 >= 0.0 && self.kappa2 >= 0.0 && self.epsilon_u >= 0.0) {
            return bad("kappa1, kappa2 and epsilon_u must be nonnegative");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.regularizer == RegularizerKind::Multishoot && self.plant != PlantTag::Tanks {
            return bad("the multishoot penalty is for the tanks data");
        }
        if self.pilot_size == 0 {
            return bad("pilot_size must be positive");
        }
        self.weight()?;
        self.train_config(0).validate()?;
        self.oscillator_params().validate()
    }

    pub fn dims(&self) -> Result<Dims> {
        let (n_u, n_y) = match self.plant {
            PlantTag::Oscillator => (2, 2),
            PlantTag::Tanks => (1, 1),
        };
        Dims::new(self.n_x, n_u, n_y, self.n_p)
    }

    pub fn net(&self) -> NetSpec {
        NetSpec { width: self.net_width, activation: self.activation }
    }

    pub fn weight(&self) -> Result<MetricWeight> {
        MetricWeight::blocks(self.w_u, self.w_y)
    }

    pub fn grid(&self) -> Result<PathGrid> {
        PathGrid::uniform(self.path_segments)
    }

    pub fn oscillator_params(&self) -> OscillatorParams {
        OscillatorParams { substeps: self.substeps, ..OscillatorParams::default() }
    }

    pub fn input_box(&self) -> Result<BoxSet> {
        Ok(BoxSet::unit(self.dims()?.n_u))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            adam_iters: self.adam_iters,
            adam_step: self.adam_step,
            bfgs_max_iters: self.bfgs_max_iters,
            bfgs_grad_tol: self.bfgs_grad_tol,
            warm_start: None,
            seed,
            x0_mode: match self.plant {
                PlantTag::Oscillator => X0Mode::Zero,
                PlantTag::Tanks => X0Mode::Estimate,
            },
        }
    }

    /// Acquisition function of the given tag; `random_seed` feeds the random
    /// kind only.
    pub fn acquisition_kind(&self, tag: AcquisitionTag, random_seed: u64) -> Result<AcquisitionKind> {
        let weight = self.weight()?;
        Ok(match tag {
            AcquisitionTag::Qlpv => AcquisitionKind::Qlpv { grid: self.grid()?, weight, mode: self.path_mode },
            AcquisitionTag::Ltv => AcquisitionKind::Ltv { grid: self.grid()?, weight },
            AcquisitionTag::Ideal => AcquisitionKind::Ideal { weight },
            AcquisitionTag::Fisher => AcquisitionKind::Fisher,
            AcquisitionTag::Random => AcquisitionKind::Random { seed: random_seed },
        })
    }

    /// Output file name `<stem>_<fingerprint>[_seed<s>].<ext>` under the
    /// output directory.
    pub fn artifact(&self, stem: &str, seed: Option<u64>, ext: &str) -> PathBuf {
        let name = match seed {
            Some(s) => format!("{stem}_{}_seed{s}.{ext}", self.fingerprint()),
            None => format!("{stem}_{}.{ext}", self.fingerprint()),
        };
        self.output_dir.join(name)
    }
}

/// Human-readable schema with the default value of every key.
pub fn schema_text() -> String {
    let defaults: toml::Table = ExperimentConfig::default().canonical().parse().expect("canonical text parses");
    let mut out = String::from("# key = default    # type: description\n");
    for (key, ty, desc) in SCHEMA {
        out.push_str(&format!("{key} = {}    # {ty}: {desc}\n", defaults[*key]));
    }
    out
}

/// Independent stream seed for one purpose of one run.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let h = sha256_hex(format!("{purpose}:{seed}").as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digits")
}
