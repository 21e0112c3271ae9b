use std::fs;
use std::path::Path;

use clap::Args;
use qfield::walk::IncrementLaw;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Experiment settings shared by every subcommand. Command-line flags take
/// precedence over the `--config` file.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Truncation degree `L`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Degree index of length `q - 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Vec<usize>>,
    /// Limit type vectors `mfrak_+`, `nfrak_+` of length `q - 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<f64>>,
    /// Type fractions for the `log Z` limit, length `q - 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    /// Start state of simulated walks, as digits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON config file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<String>,
    /// Increment law: a JSON file or inline JSON.
    #[arg(long, global = true)]
    pub law: Option<String>,
    #[arg(long, global = true)]
    pub q: Option<usize>,
    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub phi: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long = "samples", global = true)]
    pub n_samples: Option<usize>,
    /// Monte Carlo workers and thread-pool size.
    #[arg(long, global = true, env = "QFIELD_THREADS")]
    pub threads: Option<usize>,
    /// Truncation degree of series expansions.
    #[arg(long, global = true)]
    pub degree: Option<usize>,
    /// Tolerance overriding the module defaults.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub l: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub m: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub n: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub z: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub x0: Option<Vec<usize>>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<String>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config: ExperimentConfig,
    pub law: IncrementLaw,
    pub q: usize,
    pub d: usize,
    pub alpha: f64,
    pub beta: f64,
    pub phi: f64,
    pub threads: usize,
    pub out: Option<String>,
}

fn bad(pointer: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{pointer}: {msg}"))
}

fn read_law(spec: &str) -> Result<Value, CliError> {
    let text = if spec.trim_start().starts_with('{') {
        spec.to_string()
    } else {
        fs::read_to_string(spec).map_err(|e| bad("/law", format!("cannot read {spec}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| bad("/law", e))
}

fn read_config(path: &str) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(Path::new(path)).map_err(|e| bad("/", format!("cannot read {path}: {e}")))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    ExperimentConfig::deserialize(&mut de).map_err(|e| bad("/", format!("{path}: {e}")))
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Settings, CliError> {
        let file = match &self.config {
            Some(path) => read_config(path)?,
            None => ExperimentConfig::default(),
        };
        let law_value = match &self.law {
            Some(spec) => Some(read_law(spec)?),
            None => file.law.clone(),
        };
        let config = ExperimentConfig {
            law: law_value,
            q: self.q.or(file.q),
            d: self.d.or(file.d),
            alpha: self.alpha.or(file.alpha),
            beta: self.beta.or(file.beta),
            phi: self.phi.or(file.phi),
            seed: self.seed.or(file.seed),
            n_samples: self.n_samples.or(file.n_samples),
            threads: self.threads.or(file.threads),
            degree: self.degree.or(file.degree),
            tol: self.tol.or(file.tol),
            l: self.l.clone().or(file.l),
            m: self.m.clone().or(file.m),
            n: self.n.clone().or(file.n),
            z: self.z.clone().or(file.z),
            x0: self.x0.clone().or(file.x0),
        };
        let q = config.q.unwrap_or(2);
        let d = config.d.unwrap_or(3);
        if q < 2 {
            return Err(bad("/q", "must be >= 2"));
        }
        if d < 1 {
            return Err(bad("/d", "must be >= 1"));
        }
        let alpha = config.alpha.unwrap_or(0.5);
        if !(0.0..1.0).contains(&alpha) {
            return Err(bad("/alpha", format!("must lie in [0, 1), got {alpha}")));
        }
        let beta = config.beta.unwrap_or(1.0);
        if !(beta.is_finite() && beta > 0.0) {
            return Err(bad("/beta", format!("must be > 0, got {beta}")));
        }
        let phi = config.phi.unwrap_or(1.0);
        if !(phi.is_finite() && phi > 0.0) {
            return Err(bad("/phi", format!("must be > 0, got {phi}")));
        }
        if let Some(tol) = config.tol {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(bad("/tol", format!("must be > 0, got {tol}")));
            }
        }
        let threads = config.threads.unwrap_or(qfield::mc::McConfig::DEFAULT_WORKERS);
        if threads == 0 {
            return Err(bad("/threads", "must be >= 1"));
        }
        if config.n_samples == Some(0) {
            return Err(bad("/n_samples", "must be >= 1"));
        }
        let law = match &config.law {
            Some(v) => serde_json::from_value::<IncrementLaw>(v.clone()).map_err(|e| bad("/law", e))?,
            None => IncrementLaw::Deterministic { v: vec![1; d] },
        };
        law.validate(q, d).map_err(|e| bad("/law", e))?;
        Ok(Settings {
            config,
            law,
            q,
            d,
            alpha,
            beta,
            phi,
            threads,
            out: self.out.clone(),
        })
    }
}

impl Settings {
    pub fn seed(&self) -> Result<u64, CliError> {
        self.config
            .seed
            .ok_or_else(|| bad("/seed", "stochastic subcommands need an explicit seed"))
    }

    pub fn n_samples(&self, default: usize) -> usize {
        self.config.n_samples.unwrap_or(default)
    }

    pub fn degree(&self, default: usize) -> usize {
        self.config.degree.unwrap_or(default)
    }

    pub fn tol(&self, default: f64) -> f64 {
        self.config.tol.unwrap_or(default)
    }

    pub fn mc(&self) -> Result<qfield::mc::McConfig, CliError> {
        Ok(qfield::mc::McConfig::new(self.seed()?).with_workers(self.threads))
    }

    /// A vector option of length `len`, or `default` repeated.
    pub fn vector(&self, pointer: &str, v: &Option<Vec<f64>>, len: usize, default: f64) -> Result<Vec<f64>, CliError> {
        match v {
            Some(v) if v.len() != len => Err(bad(pointer, format!("needs {len} entries, got {}", v.len()))),
            Some(v) => Ok(v.clone()),
            None => Ok(vec![default; len]),
        }
    }

    /// Hex SHA-256 of the canonical (key-sorted) JSON of the resolved command
    /// and config.
    pub fn hash(&self, command: &str) -> String {
        let mut value = serde_json::to_value(&self.config).expect("config serializes");
        if let Value::Object(map) = &mut value {
            map.insert("command".into(), Value::String(command.into()));
            map.insert("q".into(), self.q.into());
            map.insert("d".into(), self.d.into());
            map.insert("threads".into(), self.threads.into());
            map.insert("law".into(), serde_json::to_value(&self.law).expect("law serializes"));
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
