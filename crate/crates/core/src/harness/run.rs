//! A single training run: prompt tuning over a frozen backbone, or full
//! fine-tuning of a private copy.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::artifacts::{self, EpochRecord};
use super::config::{ExperimentConfig, Method};
use crate::autodiff::{Tape, Var};
use crate::backbone::{argmax, load_checkpoint, Backbone, BoundBackbone, FrozenBackbone};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, score_for_table, EvalResult};
use crate::optim::{AdamW, AdamWConfig, ParamGroup};
use crate::reparam::{
    init_residual, init_simple, init_superpos_with, PromptCheckpoint, PromptParams, SoftmaxMixtureParams,
};
use crate::tasks::{generate_task, Dataset, Example, Generator, Prediction, TaskSpec};

const EVAL_CHUNK: usize = 64;

/// Outcome of one run. Wall-clock time is kept out of the serialized form
/// so that summaries are byte-identical across repeated runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub curve: Vec<EpochRecord>,
    pub best_val_score: f64,
    /// 1-based epoch of the best validation score; 0 when nothing was trained.
    pub best_epoch: usize,
    /// Test metrics of the best-validation snapshot.
    pub test: Option<EvalResult>,
    pub test_score: f64,
    #[serde(with = "hex_u64")]
    pub weights_hash_before: u64,
    #[serde(with = "hex_u64")]
    pub weights_hash_after: u64,
    pub trainable_params: usize,
    pub backbone_params: usize,
    pub failed: bool,
    pub failure: Option<String>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
    #[serde(skip)]
    pub prompt: Option<PromptParams>,
}

impl RunResult {
    /// First epoch whose validation score reaches `fraction` of the best.
    ///
    /// A run whose best score is not positive never converges and reports
    /// the full curve length.
    pub fn steps_to_fraction(&self, fraction: f64) -> usize {
        steps_to_fraction(&self.curve, fraction)
    }

    /// Writes `curve.csv`, `summary.json`, `timing.json` and, for prompt
    /// methods, `prompt.json`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        artifacts::ensure_dir(dir)?;
        artifacts::write_curve_csv(&dir.join("curve.csv"), &self.curve)?;
        artifacts::write_json(&dir.join("summary.json"), self)?;
        artifacts::write_json(
            &dir.join("timing.json"),
            &serde_json::json!({ "wall_clock_secs": self.wall_clock_secs }),
        )?;
        if let Some(params) = &self.prompt {
            let ckpt = PromptCheckpoint {
                params: params.clone(),
                seed: self.config.seed,
                optimizer: None,
            };
            ckpt.save(&dir.join("prompt.json"))?;
        }
        Ok(())
    }
}

pub fn steps_to_fraction(curve: &[EpochRecord], fraction: f64) -> usize {
    let best = curve.iter().map(|r| r.val_score).fold(f64::NEG_INFINITY, f64::max);
    if !(best > 0.0) {
        return curve.len();
    }
    curve
        .iter()
        .find(|r| r.val_score >= fraction * best)
        .map_or(curve.len(), |r| r.epoch)
}

mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

/// Task spec for a config: built-in generator, data seed and split sizes.
pub fn task_spec(config: &ExperimentConfig) -> Result<TaskSpec> {
    let mut spec = TaskSpec::builtin(Generator::from_name(&config.task)?, config.data_seed);
    spec.sizes = config.sizes;
    Ok(spec)
}

/// Loads the checkpoint named in the config, builds the task, and trains.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    let backbone = load_checkpoint(&config.backbone_path)?.freeze();
    let spec = task_spec(config)?;
    let data = generate_task(&spec)?;
    run_with_backbone(config, &backbone, &spec, &data)
}

enum Model {
    Prompt(PromptParams),
    Full(Box<Backbone>),
}

impl Model {
    fn build(config: &ExperimentConfig, backbone: &FrozenBackbone) -> Result<Self> {
        let seed = config.seed;
        Ok(match config.method {
            Method::Simple => Model::Prompt(PromptParams::Simple(init_simple(backbone, config.n, seed)?)),
            Method::Superpos => Model::Prompt(PromptParams::Superpos(init_superpos_with(
                backbone,
                config.n,
                config.m,
                seed,
                config.superpos,
            )?)),
            Method::SoftmaxMixture => Model::Prompt(PromptParams::SoftmaxMixture(SoftmaxMixtureParams {
                inner: init_superpos_with(backbone, config.n, config.m, seed, config.superpos)?,
            })),
            Method::Residual => Model::Prompt(PromptParams::Residual(init_residual(
                backbone,
                config.n,
                config.bottleneck,
                seed,
            )?)),
            Method::FullFinetune => Model::Full(Box::new(backbone.unfreeze())),
        })
    }

    fn trainable_count(&self) -> usize {
        match self {
            Model::Prompt(p) => p.trainable_count(),
            Model::Full(b) => b.weights().parameter_count(),
        }
    }

    /// One optimizer step on a batch; returns the batch loss.
    fn train_step(
        &mut self,
        frozen: &FrozenBackbone,
        spec: &TaskSpec,
        batch: &[&Example],
        dropout_p: f64,
        seed: u64,
        opt: &mut AdamW,
        hyper: (f64, f64),
    ) -> Result<f64> {
        let targets: Vec<usize> = batch.iter().map(|ex| spec.label_token(ex.target)).collect();
        let tokens: Vec<&[usize]> = batch.iter().map(|ex| ex.tokens.as_slice()).collect();
        let (lr, wd) = hyper;
        match self {
            Model::Prompt(params) => {
                let (loss, grads, bound) = {
                    let mut tape = Tape::new(seed);
                    let bb = frozen.model().bind(&mut tape, false);
                    let prompt = params.bind(&mut tape)?;
                    let logits = batch_logits(&mut tape, &bb, Some(prompt.rows), &tokens, dropout_p)?;
                    let loss = tape.cross_entropy_rows(logits, &targets)?;
                    let value = tape.scalar(loss);
                    if !value.is_finite() {
                        return Ok(value);
                    }
                    (value, tape.backward(loss)?, prompt)
                };
                params.accumulate_grads(&grads, &bound);
                let step = opt.step(&mut params.param_groups().into_optimizer_groups(lr, wd));
                params.zero_grads();
                step.map(|_| loss)
            }
            Model::Full(backbone) => {
                let (loss, grads, vars) = {
                    let mut tape = Tape::new(seed);
                    let bb = backbone.bind(&mut tape, true);
                    let logits = batch_logits(&mut tape, &bb, None, &tokens, dropout_p)?;
                    let loss = tape.cross_entropy_rows(logits, &targets)?;
                    let value = tape.scalar(loss);
                    if !value.is_finite() {
                        return Ok(value);
                    }
                    (value, tape.backward(loss)?, bb.vars())
                };
                let mut tensors = backbone.weights_mut().named_tensors_mut();
                for (var, (_, t)) in vars.iter().zip(tensors.iter_mut()) {
                    grads.accumulate_into(*var, t);
                }
                let step = opt.step(&mut [ParamGroup::new(tensors, lr, wd)]);
                for (_, t) in backbone.weights_mut().named_tensors_mut() {
                    t.zero_grad();
                }
                step.map(|_| loss)
            }
        }
    }

    /// Argmax label predictions with dropout off.
    fn predict(&self, frozen: &FrozenBackbone, spec: &TaskSpec, examples: &[Example]) -> Result<Vec<Prediction>> {
        let v = frozen.config().vocab_size;
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(EVAL_CHUNK) {
            let tokens: Vec<&[usize]> = chunk.iter().map(|ex| ex.tokens.as_slice()).collect();
            let mut tape = Tape::new(0);
            let logits = match self {
                Model::Prompt(params) => {
                    let bb = frozen.model().bind(&mut tape, false);
                    let prompt = params.bind(&mut tape)?;
                    batch_logits(&mut tape, &bb, Some(prompt.rows), &tokens, 0.0)?
                }
                Model::Full(backbone) => {
                    let bb = backbone.bind(&mut tape, false);
                    batch_logits(&mut tape, &bb, None, &tokens, 0.0)?
                }
            };
            out.extend(
                tape.value(logits)
                    .chunks_exact(v)
                    .map(|row| spec.decode_prediction(argmax(row))),
            );
        }
        Ok(out)
    }
}

/// `B x V` logits for a batch: each sequence is optionally prefixed by the
/// prompt rows, encoded, mean-pooled and read out through the tied head.
fn batch_logits(
    tape: &mut Tape<'_>,
    bb: &BoundBackbone,
    prompt_rows: Option<Var>,
    batch: &[&[usize]],
    dropout_p: f64,
) -> Result<Var> {
    let mut seqs = Vec::with_capacity(batch.len());
    for tokens in batch {
        let x = bb.embed_rows(tape, tokens)?;
        seqs.push(match prompt_rows {
            Some(p) => tape.concat_rows(&[p, x])?,
            None => x,
        });
    }
    let hidden = bb.encode_batch(tape, &seqs, dropout_p)?;
    let pooled: Vec<Var> = hidden.into_iter().map(|h| tape.mean_rows(h)).collect();
    let stacked = tape.concat_rows(&pooled)?;
    let head = tape.transpose(bb.token_embedding());
    tape.matmul(stacked, head)
}

fn eval_split(model: &Model, frozen: &FrozenBackbone, spec: &TaskSpec, split: &[Example]) -> Result<EvalResult> {
    let preds = model.predict(frozen, spec, split)?;
    let targets: Vec<_> = split.iter().map(|ex| ex.target).collect();
    evaluate(spec.metric(), &preds, &targets)
}

/// Trains with a backbone already in memory.
///
/// Numerical failures (non-finite loss or gradient) end the run early and
/// are reported through `failed`; a changed backbone hash is an error.
pub fn run_with_backbone(
    config: &ExperimentConfig,
    frozen: &FrozenBackbone,
    spec: &TaskSpec,
    data: &Dataset,
) -> Result<RunResult> {
    let started = Instant::now();
    config.validate()?;
    spec.validate(frozen.config().vocab_size)?;
    let hash_before = frozen.current_hash();
    if hash_before != frozen.weights_hash() {
        return Err(Error::Integrity("backbone changed since it was frozen".into()));
    }
    let max_len = data
        .train
        .iter()
        .chain(&data.val)
        .chain(&data.test)
        .map(|ex| ex.tokens.len())
        .max()
        .unwrap_or(0);
    if config.prompt_len() + max_len > frozen.config().max_seq_len {
        return Err(Error::Parameter(format!(
            "prompt of {} plus inputs of up to {max_len} tokens exceed max_seq_len {}",
            config.prompt_len(),
            frozen.config().max_seq_len
        )));
    }

    let mut model = Model::build(config, frozen)?;
    let trainable = model.trainable_count();
    let expected = config.expected_trainable(frozen.config().model_dim, frozen.parameter_count());
    if trainable != expected {
        return Err(Error::Contract(format!(
            "{} has {trainable} trainable parameters, closed form gives {expected}",
            config.method.name()
        )));
    }
    log::info!(
        "run {} on {} seed {}: {trainable} trainable parameters",
        config.method.name(),
        spec.name,
        config.seed
    );

    let hyper = (config.lr(), config.weight_decay());
    let mut opt = AdamW::new(AdamWConfig {
        lr: hyper.0,
        weight_decay: hyper.1,
        max_grad_norm: config.max_grad_norm,
        ..AdamWConfig::default()
    })?;
    let dropout_p = if config.dropout { frozen.config().dropout_p } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut failure = None;

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data.train[i]).collect();
            let seed = rng.gen();
            let outcome = model.train_step(frozen, spec, &batch, dropout_p, seed, &mut opt, hyper);
            let err = match outcome {
                Ok(loss) if loss.is_finite() => {
                    loss_sum += loss;
                    batches += 1;
                    continue;
                }
                Ok(_) => Error::NonFiniteLoss { epoch, step },
                Err(e @ Error::NonFiniteGradient { .. }) => e,
                Err(e) => return Err(e),
            };
            log::warn!("run aborted: {err}");
            failure = Some(err.to_string());
            break 'epochs;
        }
        let val = eval_split(&model, frozen, spec, &data.val)?;
        let val_score = score_for_table(spec.metric(), &val);
        curve.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_score,
            invalid_frac: val.invalid_frac(),
        });
        if best.as_ref().map_or(true, |(s, _, _)| val_score > *s) {
            best = Some((val_score, epoch, model.snapshot()));
        }
    }

    let hash_after = frozen.current_hash();
    if hash_after != hash_before {
        return Err(Error::Integrity(format!(
            "backbone hash changed during training: {hash_before:016x} -> {hash_after:016x}"
        )));
    }

    let failed = failure.is_some();
    let (best_val_score, best_epoch, chosen) = match best {
        Some((s, e, m)) => (s, e, m),
        None => {
            let val = eval_split(&model, frozen, spec, &data.val)?;
            (score_for_table(spec.metric(), &val), 0, model)
        }
    };
    let (test, test_score) = if failed {
        (None, 0.0)
    } else {
        let t = eval_split(&chosen, frozen, spec, &data.test)?;
        let s = score_for_table(spec.metric(), &t);
        (Some(t), s)
    };
    let prompt = match chosen {
        Model::Prompt(p) => Some(p),
        Model::Full(_) => None,
    };
    Ok(RunResult {
        config: config.clone(),
        curve,
        best_val_score,
        best_epoch,
        test,
        test_score,
        weights_hash_before: hash_before,
        weights_hash_after: hash_after,
        trainable_params: trainable,
        backbone_params: frozen.parameter_count(),
        failed,
        failure,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        prompt,
    })
}

impl Model {
    fn snapshot(&self) -> Model {
        match self {
            Model::Prompt(p) => Model::Prompt(p.clone()),
            Model::Full(b) => Model::Full(b.clone()),
        }
    }
}
