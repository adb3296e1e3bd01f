//! Masked-token pretraining on the synthetic corpus.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, Backbone};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig, ParamGroup};
use crate::vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub mask_prob: f64,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 8000,
            batch_size: 16,
            mask_prob: 0.15,
            seed: 0,
            optimizer: AdamWConfig {
                lr: 3e-3,
                weight_decay: 0.01,
                ..AdamWConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean masked-token cross-entropy per step.
    pub loss_curve: Vec<f64>,
}

/// Positions to mask: each with probability `p`, at least one.
fn mask_positions(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut picked: Vec<usize> = (0..len).filter(|_| rng.gen_bool(p)).collect();
    if picked.is_empty() {
        picked.push(rng.gen_range(0..len));
    }
    picked
}

fn check_corpus(backbone: &Backbone, corpus: &[Vec<usize>]) -> Result<()> {
    if corpus.is_empty() || corpus.iter().all(Vec::is_empty) {
        return Err(Error::Data("pretraining corpus is empty".into()));
    }
    let v = backbone.config().vocab_size;
    for seq in corpus {
        if let Some(&bad) = seq.iter().find(|&&t| t >= v) {
            return Err(Error::Index {
                what: "vocabulary",
                index: bad,
                bound: v,
            });
        }
    }
    Ok(())
}

/// Trains every backbone weight to recover masked tokens.
///
/// Masked positions are replaced by the reserved mask token; the loss is the
/// mean cross-entropy of the tied LM head over all masked positions in a batch.
pub fn pretrain(backbone: &mut Backbone, corpus: &[Vec<usize>], config: &PretrainConfig) -> Result<PretrainReport> {
    check_corpus(backbone, corpus)?;
    if config.batch_size == 0 || !(0.0..=1.0).contains(&config.mask_prob) {
        return Err(Error::Parameter(format!("invalid pretraining config {config:?}")));
    }
    let usable: Vec<&Vec<usize>> = corpus.iter().filter(|s| !s.is_empty()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(config.optimizer)?;
    let mut report = PretrainReport::default();
    let dropout = backbone.effective_dropout(true);

    for step in 0..config.steps {
        let batch: Vec<&Vec<usize>> = (0..config.batch_size)
            .map(|_| *usable.choose(&mut rng).expect("nonempty corpus"))
            .collect();
        let masks: Vec<Vec<usize>> = batch.iter().map(|s| mask_positions(s.len(), config.mask_prob, &mut rng)).collect();
        let tape_seed = rng.gen();

        let (loss, grads, vars) = {
            let mut tape = Tape::new(tape_seed);
            let bound = backbone.bind(&mut tape, true);
            let mut seqs = Vec::with_capacity(batch.len());
            let mut picked = Vec::new();
            let mut targets = Vec::new();
            let mut offset = 0;
            for (seq, mask) in batch.iter().zip(&masks) {
                let mut input = (*seq).clone();
                for &p in mask {
                    input[p] = vocab::MASK;
                    targets.push(seq[p]);
                    picked.push(offset + p);
                }
                offset += seq.len();
                seqs.push(bound.embed_rows(&mut tape, &input)?);
            }
            let (stacked, _) = bound.encode_stacked(&mut tape, &seqs, dropout)?;
            let hidden = tape.gather_rows(stacked, &picked)?;
            let head = tape.transpose(bound.token_embedding());
            let logits = tape.matmul(hidden, head)?;
            let loss = tape.cross_entropy_rows(logits, &targets)?;
            let value = tape.scalar(loss);
            (value, tape.backward(loss)?, bound.vars())
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0, step });
        }
        report.loss_curve.push(loss);

        let mut tensors = backbone.weights_mut().named_tensors_mut();
        for (var, (_, t)) in vars.iter().zip(tensors.iter_mut()) {
            grads.accumulate_into(*var, t);
        }
        let (lr, wd) = (config.optimizer.lr, config.optimizer.weight_decay);
        opt.step(&mut [ParamGroup::new(tensors, lr, wd)])?;
        for (_, t) in backbone.weights_mut().named_tensors_mut() {
            t.zero_grad();
        }
        if step % 200 == 0 {
            log::debug!("pretrain step {step}: loss {loss:.4}");
        }
    }
    Ok(report)
}

/// Share of masked positions whose argmax prediction is the original token.
pub fn masked_token_accuracy(backbone: &Backbone, corpus: &[Vec<usize>], mask_prob: f64, seed: u64) -> Result<f64> {
    check_corpus(backbone, corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hits, mut total) = (0usize, 0usize);
    let v = backbone.config().vocab_size;
    for seq in corpus.iter().filter(|s| !s.is_empty()) {
        let mask = mask_positions(seq.len(), mask_prob, &mut rng);
        let mut input = seq.clone();
        for &p in &mask {
            input[p] = vocab::MASK;
        }
        let mut tape = Tape::new(0);
        let bound = backbone.bind(&mut tape, false);
        let rows = bound.embed_rows(&mut tape, &input)?;
        let hidden = bound.encode_rows(&mut tape, rows, 0.0)?;
        let picked = tape.gather_rows(hidden, &mask)?;
        let head = tape.transpose(bound.token_embedding());
        let logits = tape.matmul(picked, head)?;
        for (row, &p) in tape.value(logits).chunks_exact(v).zip(&mask) {
            hits += usize::from(argmax(row) == seq[p]);
            total += 1;
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{init_backbone, BackboneConfig};
    use crate::tasks::generate_pretrain_corpus;

    fn tiny() -> Backbone {
        init_backbone(BackboneConfig {
            model_dim: 16,
            num_heads: 2,
            ffn_dim: 32,
            max_seq_len: 32,
            ..BackboneConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_steps_is_noop() {
        let mut b = tiny();
        let before = b.weights_hash();
        let cfg = PretrainConfig {
            steps: 0,
            ..PretrainConfig::default()
        };
        let report = pretrain(&mut b, &generate_pretrain_corpus(0, 10), &cfg).unwrap();
        assert!(report.loss_curve.is_empty());
        assert_eq!(b.weights_hash(), before);
    }

    #[test]
    fn empty_corpus_rejected() {
        let mut b = tiny();
        assert!(matches!(
            pretrain(&mut b, &[], &PretrainConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn deterministic_and_loss_decreases() {
        let corpus = generate_pretrain_corpus(1, 200);
        let cfg = PretrainConfig {
            steps: 60,
            batch_size: 8,
            ..PretrainConfig::default()
        };
        let mut a = tiny();
        let mut b = tiny();
        let ra = pretrain(&mut a, &corpus, &cfg).unwrap();
        pretrain(&mut b, &corpus, &cfg).unwrap();
        assert_eq!(a.weights_hash(), b.weights_hash());
        let head: f64 = ra.loss_curve[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = ra.loss_curve[50..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{head} -> {tail}");
    }
}
