use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, PretrainConfig};
use crate::error::{Error, Result};
use crate::reparam::{self, SuperPosOptions, DEFAULT_BOTTLENECK};
use crate::tasks::SplitSizes;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Simple,
    Superpos,
    SoftmaxMixture,
    Residual,
    FullFinetune,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Simple,
        Method::Superpos,
        Method::SoftmaxMixture,
        Method::Residual,
        Method::FullFinetune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Simple => "simple",
            Method::Superpos => "superpos",
            Method::SoftmaxMixture => "softmax_mixture",
            Method::Residual => "residual",
            Method::FullFinetune => "full_finetune",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        let norm = name.to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::Parameter(format!("unknown method `{name}`")))
    }

    /// Default `(learning rate, weight decay)`.
    pub fn default_hyperparameters(self) -> (f64, f64) {
        match self {
            Method::Simple => (0.01, 0.01),
            Method::Residual => (0.3, 0.01),
            Method::Superpos | Method::SoftmaxMixture => (0.01, 1e-5),
            Method::FullFinetune => (1e-5, 0.0),
        }
    }

    pub fn is_prompt_tuning(self) -> bool {
        self != Method::FullFinetune
    }
}

/// Everything that determines one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Dropout inside the frozen backbone during training.
    pub dropout: bool,
    pub n: usize,
    pub m: usize,
    pub bottleneck: usize,
    /// Overrides the method default when set.
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub task: String,
    /// Seed of the task generator, kept apart from the training seed.
    pub data_seed: u64,
    pub sizes: SplitSizes,
    pub backbone_path: PathBuf,
    pub superpos: SuperPosOptions,
    pub max_grad_norm: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Superpos,
            dropout: true,
            n: 10,
            m: 128,
            bottleneck: DEFAULT_BOTTLENECK,
            lr: None,
            weight_decay: None,
            epochs: 80,
            batch_size: 32,
            seed: 0,
            task: "parity".into(),
            data_seed: 0,
            sizes: SplitSizes::default(),
            backbone_path: PathBuf::from("backbone.json"),
            superpos: SuperPosOptions::default(),
            max_grad_norm: None,
        }
    }
}

impl ExperimentConfig {
    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or(self.method.default_hyperparameters().0)
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay.unwrap_or(self.method.default_hyperparameters().1)
    }

    /// Prompt tokens actually prepended; full fine-tuning uses none.
    pub fn prompt_len(&self) -> usize {
        if self.method.is_prompt_tuning() {
            self.n
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        if self.method.is_prompt_tuning() && self.n == 0 {
            return Err(Error::Parameter("prompt methods need n >= 1".into()));
        }
        if matches!(self.method, Method::Superpos | Method::SoftmaxMixture) && self.m == 0 {
            return Err(Error::Parameter("m must be positive".into()));
        }
        if self.method == Method::Residual && self.bottleneck == 0 {
            return Err(Error::Parameter("bottleneck must be positive".into()));
        }
        if !(self.lr() > 0.0) || !(self.weight_decay() >= 0.0) {
            return Err(Error::Parameter(format!(
                "bad optimizer settings lr={} wd={}",
                self.lr(),
                self.weight_decay()
            )));
        }
        Ok(())
    }

    /// Closed-form trainable count for model width `e` and backbone size.
    pub fn expected_trainable(&self, e: usize, backbone_params: usize) -> usize {
        match self.method {
            Method::Simple => reparam::simple_count(e, self.n),
            Method::Superpos | Method::SoftmaxMixture => {
                let full = reparam::superpos_count(e, self.n, self.m);
                if self.superpos.shared_basis {
                    full - (self.n - 1) * e * self.m
                } else {
                    full
                }
            }
            Method::Residual => reparam::residual_count(e, self.n, self.bottleneck),
            Method::FullFinetune => backbone_params,
        }
    }
}

/// Top-level CLI configuration; every section is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub experiment: ExperimentConfig,
    pub tasks: Vec<String>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub m_values: Vec<usize>,
    pub backbone: BackboneConfig,
    pub pretrain: PretrainConfig,
    pub corpus_size: usize,
    pub corpus_seed: u64,
}

impl HarnessConfig {
    pub fn tasks_or_suite(&self) -> Vec<String> {
        if self.tasks.is_empty() {
            crate::tasks::Generator::ALL.iter().map(|g| g.name().to_string()).collect()
        } else {
            self.tasks.clone()
        }
    }

    pub fn seeds_or_default(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![0, 1, 2]
        } else {
            self.seeds.clone()
        }
    }

    pub fn methods_or_default(&self) -> Vec<Method> {
        if self.methods.is_empty() {
            vec![Method::Simple, Method::Residual, Method::Superpos]
        } else {
            self.methods.clone()
        }
    }

    pub fn corpus_size_or_default(&self) -> usize {
        if self.corpus_size == 0 {
            4000
        } else {
            self.corpus_size
        }
    }
}
