//! Synthetic downstream tasks encoded as single label-token prediction.

mod corpus;
mod generators;
mod io;

pub use corpus::generate_pretrain_corpus;
pub use generators::{evaluate_rule, generate_task};
pub use io::{load_examples, save_examples};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TaskMetric;
use crate::vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Parity of the number of occurrences of a marked symbol.
    Parity,
    /// Which of two designated symbols occurs more often.
    Majority,
    /// Whether two separated segments are equal as multisets.
    PairMatch,
    /// Whether a marked pair appears in ascending order.
    Order,
    /// Fraction of symbol A among A and B, as a regression target.
    RatioReg,
}

impl Generator {
    pub const ALL: [Generator; 5] = [
        Generator::Parity,
        Generator::Majority,
        Generator::PairMatch,
        Generator::Order,
        Generator::RatioReg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Generator::Parity => "parity",
            Generator::Majority => "majority",
            Generator::PairMatch => "pair-match",
            Generator::Order => "order",
            Generator::RatioReg => "ratio-reg",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        let norm = name.to_ascii_lowercase().replace('_', "-");
        Generator::ALL
            .into_iter()
            .find(|g| g.name() == norm)
            .ok_or_else(|| Error::Parameter(format!("unknown task `{name}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification { classes: usize },
    /// Targets in `[0, 1]` discretized into `bins` evenly spaced label tokens.
    Regression { bins: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 256,
            val: 256,
            test: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub generator: Generator,
    pub kind: TaskKind,
    pub label_tokens: Vec<usize>,
    pub generator_seed: u64,
    pub sizes: SplitSizes,
    pub min_len: usize,
    pub max_len: usize,
}

impl TaskSpec {
    /// Built-in task with default split sizes.
    pub fn builtin(generator: Generator, seed: u64) -> Self {
        let adverb = |offset: usize, count: usize| -> Vec<usize> {
            (vocab::ADVERBS.start + offset..vocab::ADVERBS.start + offset + count).collect()
        };
        let (kind, label_tokens) = match generator {
            Generator::Parity => (TaskKind::Classification { classes: 2 }, adverb(0, 2)),
            Generator::Majority => (TaskKind::Classification { classes: 2 }, adverb(2, 2)),
            Generator::PairMatch => (TaskKind::Classification { classes: 2 }, adverb(4, 2)),
            Generator::Order => (TaskKind::Classification { classes: 2 }, adverb(6, 2)),
            Generator::RatioReg => (TaskKind::Regression { bins: 11 }, adverb(8, 11)),
        };
        Self {
            name: generator.name().to_string(),
            generator,
            kind,
            label_tokens,
            generator_seed: seed,
            sizes: SplitSizes::default(),
            min_len: 6,
            max_len: 12,
        }
    }

    pub fn suite(seed: u64) -> Vec<TaskSpec> {
        Generator::ALL.iter().map(|&g| TaskSpec::builtin(g, seed)).collect()
    }

    pub fn num_labels(&self) -> usize {
        match self.kind {
            TaskKind::Classification { classes } => classes,
            TaskKind::Regression { bins } => bins,
        }
    }

    pub fn metric(&self) -> TaskMetric {
        match self.generator {
            Generator::Parity => TaskMetric::Accuracy,
            Generator::Majority | Generator::PairMatch => TaskMetric::F1Accuracy,
            Generator::Order => TaskMetric::Mcc,
            Generator::RatioReg => TaskMetric::PearsonSpearman,
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(format!("task {}: {msg}", self.name)));
        if self.label_tokens.len() != self.num_labels() {
            return bad(format!(
                "{} label tokens for {} labels",
                self.label_tokens.len(),
                self.num_labels()
            ));
        }
        let mut sorted = self.label_tokens.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.label_tokens.len() {
            return bad("label tokens must be distinct".into());
        }
        if let Some(&t) = self.label_tokens.iter().find(|&&t| t >= vocab_size) {
            return bad(format!("label token {t} outside vocabulary of {vocab_size}"));
        }
        if vocab_size < vocab::LAYOUT_SIZE {
            return bad(format!("task generators need a vocabulary of at least {}", vocab::LAYOUT_SIZE));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        if self.sizes.train == 0 || self.sizes.val == 0 || self.sizes.test == 0 {
            return bad("every split needs at least one example".into());
        }
        Ok(())
    }

    /// Label index used for training (class, or regression bin).
    pub fn label_index(&self, target: Target) -> usize {
        match (self.kind, target) {
            (TaskKind::Regression { bins }, Target::Value(v)) => {
                ((v.clamp(0.0, 1.0) * (bins - 1) as f64).round()) as usize
            }
            (_, Target::Class(c)) => c,
            (TaskKind::Classification { .. }, Target::Value(v)) => v.round() as usize,
        }
    }

    pub fn label_token(&self, target: Target) -> usize {
        self.label_tokens[self.label_index(target)]
    }

    /// Maps a generated token back to a prediction.
    pub fn decode_prediction(&self, token: usize) -> Prediction {
        match self.label_tokens.iter().position(|&t| t == token) {
            None => Prediction::Invalid,
            Some(i) => match self.kind {
                TaskKind::Classification { .. } => Prediction::Class(i),
                TaskKind::Regression { bins } => Prediction::Value(i as f64 / (bins - 1) as f64),
            },
        }
    }
}

pub fn decode_prediction(spec: &TaskSpec, token: usize) -> Prediction {
    spec.decode_prediction(token)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Class(usize),
    Value(f64),
}

impl Target {
    pub fn as_f64(self) -> f64 {
        match self {
            Target::Class(c) => c as f64,
            Target::Value(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prediction {
    Class(usize),
    Value(f64),
    Invalid,
}

impl Prediction {
    pub fn is_invalid(self) -> bool {
        matches!(self, Prediction::Invalid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub target: Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    /// Share of the most frequent label in a split: the majority-class baseline.
    pub fn majority_baseline(spec: &TaskSpec, split: &[Example]) -> f64 {
        let mut counts = vec![0usize; spec.num_labels()];
        for ex in split {
            counts[spec.label_index(ex.target)] += 1;
        }
        counts.into_iter().max().unwrap_or(0) as f64 / split.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_lookup_and_invalid() {
        let mut spec = TaskSpec::builtin(Generator::Parity, 0);
        spec.label_tokens = vec![7, 9];
        assert_eq!(spec.decode_prediction(9), Prediction::Class(1));
        assert_eq!(spec.decode_prediction(3), Prediction::Invalid);
    }

    #[test]
    fn regression_bins_decode() {
        let spec = TaskSpec::builtin(Generator::RatioReg, 0);
        let token = spec.label_tokens[3];
        match spec.decode_prediction(token) {
            Prediction::Value(v) => assert!((v - 0.3).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert_eq!(spec.label_index(Target::Value(0.3)), 3);
        assert_eq!(spec.label_token(Target::Value(1.0)), spec.label_tokens[10]);
    }

    #[test]
    fn builtin_label_tokens_are_disjoint_and_valid() {
        let mut all = Vec::new();
        for spec in TaskSpec::suite(0) {
            spec.validate(512).unwrap();
            all.extend(spec.label_tokens.clone());
        }
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = TaskSpec::builtin(Generator::Order, 0);
        spec.label_tokens = vec![5, 5];
        assert!(spec.validate(512).is_err());
        let mut spec = TaskSpec::builtin(Generator::Order, 0);
        spec.label_tokens = vec![5, 900];
        assert!(spec.validate(512).is_err());
        let mut spec = TaskSpec::builtin(Generator::Order, 0);
        spec.min_len = 20;
        assert!(spec.validate(512).is_err());
        assert!(Generator::from_name("nope").is_err());
        assert_eq!(Generator::from_name("PAIR_MATCH").unwrap(), Generator::PairMatch);
    }
}
