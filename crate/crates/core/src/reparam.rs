//! Prompt parameterizations: free prompts, superposed sampled embeddings,
//! softmax-weighted mixtures, and a residual bottleneck MLP.
//!
//! Every variant stores its tensors in column layout (`e x n` prompts,
//! `e x m` bases, length-`m` coefficient vectors) and materializes the
//! prompt matrix on a tape as `n x e` rows ready to be prepended to the
//! token rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::backbone::{FrozenBackbone, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::optim::{OptimizerState, ParamGroup};
use crate::vocab;

pub const DEFAULT_BOTTLENECK: usize = 128;

/// `count` distinct non-special vocabulary ids from a partial Fisher–Yates
/// shuffle. A shorter draw with the same seed is a prefix of a longer one.
pub fn sample_token_indices(vocab_size: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    let mut pool: Vec<usize> = (vocab::NUM_SPECIAL..vocab_size).collect();
    if count > pool.len() {
        return Err(Error::Parameter(format!(
            "cannot sample {count} distinct tokens from {} non-special ids",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(count);
    Ok(pool)
}

/// `e x k` matrix whose columns are the embeddings of `ids`.
fn embedding_columns(backbone: &FrozenBackbone, ids: &[usize]) -> Tensor {
    let e = backbone.config().model_dim;
    let mut t = Tensor::zeros(&[e, ids.len()]);
    for (j, &id) in ids.iter().enumerate() {
        for (d, &v) in backbone.embedding_row(id).iter().enumerate() {
            t.set(d, j, v);
        }
    }
    t.set_requires_grad(true);
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplePromptParams {
    /// `e x n`, one prompt per column.
    pub prompt: Tensor,
    pub sampled: Vec<usize>,
}

pub fn init_simple(backbone: &FrozenBackbone, n: usize, seed: u64) -> Result<SimplePromptParams> {
    if n == 0 {
        return Err(Error::Parameter("prompt length must be at least 1".into()));
    }
    let sampled = sample_token_indices(backbone.config().vocab_size, n, seed)?;
    Ok(SimplePromptParams {
        prompt: embedding_columns(backbone, &sampled),
        sampled,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefInit {
    /// Prompt `i` starts as a 1 at index `i mod m`.
    #[default]
    OneHot,
    /// Every coefficient starts at `1/m`.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuperPosOptions {
    pub coef_init: CoefInit,
    /// One basis shared by every prompt instead of a private copy each.
    pub shared_basis: bool,
}

impl Default for SuperPosOptions {
    fn default() -> Self {
        Self {
            coef_init: CoefInit::OneHot,
            shared_basis: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperPosParams {
    /// `e x m` each; one per prompt, or a single entry when shared.
    pub bases: Vec<Tensor>,
    /// Length-`m` weights, one per prompt.
    pub coefs: Vec<Tensor>,
    pub sampled: Vec<usize>,
}

impl SuperPosParams {
    pub fn n(&self) -> usize {
        self.coefs.len()
    }

    pub fn m(&self) -> usize {
        self.sampled.len()
    }

    pub fn shared_basis(&self) -> bool {
        self.bases.len() == 1 && self.coefs.len() > 1
    }

    fn basis(&self, i: usize) -> usize {
        if self.bases.len() == 1 {
            0
        } else {
            i
        }
    }
}

pub fn init_superpos(backbone: &FrozenBackbone, n: usize, m: usize, seed: u64) -> Result<SuperPosParams> {
    init_superpos_with(backbone, n, m, seed, SuperPosOptions::default())
}

pub fn init_superpos_with(
    backbone: &FrozenBackbone,
    n: usize,
    m: usize,
    seed: u64,
    options: SuperPosOptions,
) -> Result<SuperPosParams> {
    if n == 0 || m == 0 {
        return Err(Error::Parameter(format!("need n >= 1 and m >= 1, got n={n}, m={m}")));
    }
    if m > backbone.config().vocab_size {
        return Err(Error::Parameter(format!(
            "m={m} exceeds vocabulary size {}",
            backbone.config().vocab_size
        )));
    }
    let sampled = sample_token_indices(backbone.config().vocab_size, m, seed)?;
    let basis = embedding_columns(backbone, &sampled);
    let bases = if options.shared_basis {
        vec![basis]
    } else {
        vec![basis; n]
    };
    let coefs = (0..n)
        .map(|i| {
            let mut c = match options.coef_init {
                CoefInit::OneHot => {
                    let mut v = vec![0.0; m];
                    v[i % m] = 1.0;
                    Tensor::vector(v)
                }
                CoefInit::Uniform => Tensor::vector(vec![1.0 / m as f64; m]),
            };
            c.set_requires_grad(true);
            c
        })
        .collect();
    Ok(SuperPosParams { bases, coefs, sampled })
}

/// Same state as [`SuperPosParams`]; coefficients pass through a softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxMixtureParams {
    pub inner: SuperPosParams,
}

pub fn init_softmax_mixture(backbone: &FrozenBackbone, n: usize, m: usize, seed: u64) -> Result<SoftmaxMixtureParams> {
    Ok(SoftmaxMixtureParams {
        inner: init_superpos(backbone, n, m, seed)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualPromptParams {
    /// `e x n`.
    pub prompt: Tensor,
    /// `b x e`.
    pub down: Tensor,
    /// `e x b`.
    pub up: Tensor,
    pub norm_gain: Tensor,
    pub norm_bias: Tensor,
    pub sampled: Vec<usize>,
}

impl ResidualPromptParams {
    pub fn bottleneck(&self) -> usize {
        self.down.dims().0
    }
}

/// Sampled-embedding prompts plus a Gaussian-initialized bottleneck MLP
/// (`std = 1/sqrt(fan_in)`) and an identity post-norm.
pub fn init_residual(backbone: &FrozenBackbone, n: usize, bottleneck: usize, seed: u64) -> Result<ResidualPromptParams> {
    if bottleneck == 0 {
        return Err(Error::Parameter("bottleneck must be at least 1".into()));
    }
    let simple = init_simple(backbone, n, seed)?;
    let e = backbone.config().model_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_B077_1E);
    let mut gaussian = |rows: usize, cols: usize, fan_in: usize| {
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
        let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
        Tensor::matrix(rows, cols, data).expect("shape matches").with_grad()
    };
    let down = gaussian(bottleneck, e, e);
    let up = gaussian(e, bottleneck, bottleneck);
    Ok(ResidualPromptParams {
        prompt: simple.prompt,
        down,
        up,
        norm_gain: Tensor::filled(&[e], 1.0).with_grad(),
        norm_bias: Tensor::zeros(&[e]).with_grad(),
        sampled: simple.sampled,
    })
}

/// Trainable prompt state of any method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PromptParams {
    Simple(SimplePromptParams),
    Superpos(SuperPosParams),
    SoftmaxMixture(SoftmaxMixtureParams),
    Residual(ResidualPromptParams),
}

/// Prompt materialized on a tape.
pub struct BoundPrompt {
    /// Leaves in the order of [`PromptParams::named_tensors`].
    pub vars: Vec<Var>,
    /// `n x e`.
    pub rows: Var,
}

/// Split of trainable tensors by whether weight decay applies.
pub struct DecayGroups<'a> {
    pub no_decay: Vec<(String, &'a mut Tensor)>,
    pub decay: Vec<(String, &'a mut Tensor)>,
}

impl<'a> DecayGroups<'a> {
    /// `[no_decay, decay]`, with `weight_decay` only on the second group.
    pub fn into_optimizer_groups(self, lr: f64, weight_decay: f64) -> Vec<ParamGroup<'a>> {
        vec![
            ParamGroup::new(self.no_decay, lr, 0.0),
            ParamGroup::new(self.decay, lr, weight_decay),
        ]
    }
}

impl PromptParams {
    pub fn method_name(&self) -> &'static str {
        match self {
            PromptParams::Simple(_) => "simple",
            PromptParams::Superpos(_) => "superpos",
            PromptParams::SoftmaxMixture(_) => "softmax_mixture",
            PromptParams::Residual(_) => "residual",
        }
    }

    pub fn prompt_len(&self) -> usize {
        match self {
            PromptParams::Simple(p) => p.prompt.dims().1,
            PromptParams::Superpos(p) => p.n(),
            PromptParams::SoftmaxMixture(p) => p.inner.n(),
            PromptParams::Residual(p) => p.prompt.dims().1,
        }
    }

    pub fn sampled(&self) -> &[usize] {
        match self {
            PromptParams::Simple(p) => &p.sampled,
            PromptParams::Superpos(p) => &p.sampled,
            PromptParams::SoftmaxMixture(p) => &p.inner.sampled,
            PromptParams::Residual(p) => &p.sampled,
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        match self {
            PromptParams::Simple(p) => vec![("prompt".into(), &p.prompt)],
            PromptParams::Superpos(p) | PromptParams::SoftmaxMixture(SoftmaxMixtureParams { inner: p }) => {
                superpos_named(p)
            }
            PromptParams::Residual(p) => vec![
                ("prompt".into(), &p.prompt),
                ("down".into(), &p.down),
                ("up".into(), &p.up),
                ("norm_gain".into(), &p.norm_gain),
                ("norm_bias".into(), &p.norm_bias),
            ],
        }
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            PromptParams::Simple(p) => vec![("prompt".into(), &mut p.prompt)],
            PromptParams::Superpos(p) | PromptParams::SoftmaxMixture(SoftmaxMixtureParams { inner: p }) => {
                let bases = p.bases.iter_mut().enumerate().map(|(i, t)| (format!("basis.{i}"), t));
                let coefs = p.coefs.iter_mut().enumerate().map(|(i, t)| (format!("coef.{i}"), t));
                bases.chain(coefs).collect()
            }
            PromptParams::Residual(p) => vec![
                ("prompt".into(), &mut p.prompt),
                ("down".into(), &mut p.down),
                ("up".into(), &mut p.up),
                ("norm_gain".into(), &mut p.norm_gain),
                ("norm_bias".into(), &mut p.norm_bias),
            ],
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Bases are exempt from weight decay; everything else decays.
    pub fn param_groups(&mut self) -> DecayGroups<'_> {
        let mut groups = DecayGroups {
            no_decay: Vec::new(),
            decay: Vec::new(),
        };
        for (name, t) in self.named_tensors_mut() {
            if name.starts_with("basis.") {
                groups.no_decay.push((name, t));
            } else {
                groups.decay.push((name, t));
            }
        }
        groups
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.named_tensors_mut() {
            t.zero_grad();
        }
    }

    /// Adds tape gradients into each tensor's slot.
    pub fn accumulate_grads(&mut self, grads: &Gradients, bound: &BoundPrompt) {
        for (var, (_, t)) in bound.vars.iter().zip(self.named_tensors_mut()) {
            grads.accumulate_into(*var, t);
        }
    }

    /// Places the parameters on `tape` and builds the `n x e` prompt rows.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Result<BoundPrompt> {
        match self {
            PromptParams::Simple(p) => {
                let v = tape.param(&p.prompt);
                let rows = tape.transpose(v);
                Ok(BoundPrompt { vars: vec![v], rows })
            }
            PromptParams::Superpos(p) => bind_mixture(p, tape, false),
            PromptParams::SoftmaxMixture(p) => bind_mixture(&p.inner, tape, true),
            PromptParams::Residual(p) => {
                let prompt = tape.param(&p.prompt);
                let down = tape.param(&p.down);
                let up = tape.param(&p.up);
                let gain = tape.param(&p.norm_gain);
                let bias = tape.param(&p.norm_bias);
                let rows = tape.transpose(prompt);
                let down_t = tape.transpose(down);
                let hidden = tape.matmul(rows, down_t)?;
                let hidden = tape.relu(hidden);
                let up_t = tape.transpose(up);
                let branch = tape.matmul(hidden, up_t)?;
                let branch = tape.layer_norm_rows(branch, gain, bias, LAYER_NORM_EPS)?;
                let out = tape.add(branch, rows)?;
                Ok(BoundPrompt {
                    vars: vec![prompt, down, up, gain, bias],
                    rows: out,
                })
            }
        }
    }

    /// The prompt matrix `P` as an `e x n` tensor.
    pub fn materialize(&self) -> Result<Tensor> {
        let mut tape = Tape::new(0);
        let bound = self.bind(&mut tape)?;
        let cols = tape.transpose(bound.rows);
        Ok(tape.to_tensor(cols))
    }

    /// Superposition weights `p'_i` of mixture methods.
    pub fn coefficients(&self) -> Option<&[Tensor]> {
        match self {
            PromptParams::Superpos(p) => Some(&p.coefs),
            PromptParams::SoftmaxMixture(p) => Some(&p.inner.coefs),
            _ => None,
        }
    }
}

fn superpos_named(p: &SuperPosParams) -> Vec<(String, &Tensor)> {
    let bases = p.bases.iter().enumerate().map(|(i, t)| (format!("basis.{i}"), t));
    let coefs = p.coefs.iter().enumerate().map(|(i, t)| (format!("coef.{i}"), t));
    bases.chain(coefs).collect()
}

fn bind_mixture<'a>(p: &'a SuperPosParams, tape: &mut Tape<'a>, softmax: bool) -> Result<BoundPrompt> {
    let bases: Vec<Var> = p.bases.iter().map(|t| tape.param(t)).collect();
    let coefs: Vec<Var> = p.coefs.iter().map(|t| tape.param(t)).collect();
    let mut columns = Vec::with_capacity(coefs.len());
    for (i, &c) in coefs.iter().enumerate() {
        let weights = if softmax { tape.softmax_columns(c) } else { c };
        columns.push(tape.matmul(bases[p.basis(i)], weights)?);
    }
    let matrix = tape.concat_cols(&columns)?;
    let rows = tape.transpose(matrix);
    let mut vars = bases;
    vars.extend(coefs);
    Ok(BoundPrompt { vars, rows })
}

pub fn materialize_superpos(params: &SuperPosParams) -> Result<Tensor> {
    PromptParams::Superpos(params.clone()).materialize()
}

pub fn materialize_softmax(params: &SoftmaxMixtureParams) -> Result<Tensor> {
    PromptParams::SoftmaxMixture(params.clone()).materialize()
}

pub fn materialize_residual(params: &ResidualPromptParams) -> Result<Tensor> {
    PromptParams::Residual(params.clone()).materialize()
}

/// Closed-form trainable counts.
pub fn simple_count(e: usize, n: usize) -> usize {
    e * n
}

pub fn superpos_count(e: usize, n: usize, m: usize) -> usize {
    n * (e * m + m)
}

pub fn residual_count(e: usize, n: usize, b: usize) -> usize {
    e * n + 2 * e * b + 2 * e
}

/// Prompt state saved to disk, with what is needed to reproduce its init.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptCheckpoint {
    pub params: PromptParams,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerState>,
}

impl PromptCheckpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ckpt: Self = serde_json::from_str(&text)?;
        for (_, t) in ckpt.params.named_tensors_mut() {
            t.set_requires_grad(true);
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{init_backbone, BackboneConfig};

    fn frozen() -> FrozenBackbone {
        init_backbone(BackboneConfig {
            model_dim: 16,
            num_heads: 2,
            ffn_dim: 32,
            max_seq_len: 32,
            ..BackboneConfig::default()
        })
        .unwrap()
        .freeze()
    }

    #[test]
    fn sampling_is_distinct_nonspecial_and_prefix_stable() {
        let a = sample_token_indices(512, 128, 4).unwrap();
        let b = sample_token_indices(512, 10, 4).unwrap();
        assert_eq!(&a[..10], &b[..]);
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 128);
        assert!(a.iter().all(|&t| !vocab::is_special(t)));
        assert!(sample_token_indices(16, 9, 0).is_err());
    }

    #[test]
    fn simple_copies_rows() {
        let bb = frozen();
        let p = init_simple(&bb, 1, 3).unwrap();
        assert_eq!(p.prompt.column(0), bb.embedding_row(p.sampled[0]));
    }

    #[test]
    fn superpos_shapes_and_counts() {
        let bb = frozen();
        let p = init_superpos(&bb, 10, 128, 0).unwrap();
        assert_eq!(p.bases.len(), 10);
        assert!(p.bases.iter().all(|b| b.shape() == [16, 128]));
        assert!(p.coefs.iter().all(|c| c.len() == 128));
        let mut params = PromptParams::Superpos(p);
        assert_eq!(params.trainable_count(), superpos_count(16, 10, 128));
        let g = params.param_groups();
        assert_eq!((g.no_decay.len(), g.decay.len()), (10, 10));
        assert!(g.no_decay.iter().all(|(n, _)| n.starts_with("basis")));
    }

    #[test]
    fn superpos_init_reproduces_simple() {
        let bb = frozen();
        let s = PromptParams::Simple(init_simple(&bb, 5, 9).unwrap()).materialize().unwrap();
        let p = PromptParams::Superpos(init_superpos(&bb, 5, 64, 9).unwrap()).materialize().unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn m_one_repeats_single_embedding() {
        let bb = frozen();
        let p = init_superpos(&bb, 4, 1, 2).unwrap();
        let m = materialize_superpos(&p).unwrap();
        for i in 0..4 {
            assert_eq!(m.column(i), bb.embedding_row(p.sampled[0]));
        }
    }

    #[test]
    fn superposition_of_identity_basis() {
        let p = SuperPosParams {
            bases: vec![Tensor::identity(2)],
            coefs: vec![Tensor::vector(vec![2.0, 3.0])],
            sampled: vec![8, 9],
        };
        assert_eq!(materialize_superpos(&p).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn softmax_mixture_examples() {
        let basis = Tensor::identity(2);
        let p = SoftmaxMixtureParams {
            inner: SuperPosParams {
                bases: vec![basis.clone()],
                coefs: vec![Tensor::vector(vec![3f64.ln(), 0.0])],
                sampled: vec![8, 9],
            },
        };
        let out = materialize_softmax(&p).unwrap();
        assert!((out.data()[0] - 0.75).abs() < 1e-15 && (out.data()[1] - 0.25).abs() < 1e-15);
        let uniform = SoftmaxMixtureParams {
            inner: SuperPosParams {
                bases: vec![Tensor::matrix(2, 2, vec![1.0, 3.0, -2.0, 4.0]).unwrap()],
                coefs: vec![Tensor::vector(vec![0.0, 0.0])],
                sampled: vec![8, 9],
            },
        };
        assert_eq!(materialize_softmax(&uniform).unwrap().data(), &[2.0, 1.0]);
    }

    #[test]
    fn residual_zero_up_is_identity() {
        let bb = frozen();
        let mut p = init_residual(&bb, 10, 128, 1).unwrap();
        p.up = Tensor::zeros(&[16, 128]);
        let out = materialize_residual(&p).unwrap();
        assert_eq!(out.shape(), &[16, 10]);
        assert_eq!(out, Tensor::new(vec![16, 10], p.prompt.data().to_vec()).unwrap());
        assert_eq!(PromptParams::Residual(p).trainable_count(), residual_count(16, 10, 128));
    }

    #[test]
    fn simple_single_decay_group() {
        let bb = frozen();
        let mut p = PromptParams::Simple(init_simple(&bb, 3, 0).unwrap());
        assert_eq!(p.trainable_count(), simple_count(16, 3));
        let g = p.param_groups();
        assert!(g.no_decay.is_empty());
        assert_eq!(g.decay.len(), 1);
    }

    #[test]
    fn shared_basis_flag() {
        let bb = frozen();
        let opts = SuperPosOptions {
            shared_basis: true,
            coef_init: CoefInit::Uniform,
        };
        let p = init_superpos_with(&bb, 3, 8, 0, opts).unwrap();
        assert!(p.shared_basis());
        let m = materialize_superpos(&p).unwrap();
        assert_eq!(m.column(0), m.column(2));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let bb = frozen();
        let ckpt = PromptCheckpoint {
            params: PromptParams::SoftmaxMixture(init_softmax_mixture(&bb, 2, 4, 5).unwrap()),
            seed: 5,
            optimizer: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompt.json");
        ckpt.save(&path).unwrap();
        assert_eq!(PromptCheckpoint::load(&path).unwrap(), ckpt);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"method\":\"softmax_mixture\""));
    }
}
