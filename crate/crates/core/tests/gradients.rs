//! Every tape op and the full encoder against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use superpos::autodiff::{finite_difference_gradient, relative_error, Tape, Tensor, Var, DEFAULT_EPSILON};
use superpos::backbone::{init_backbone, BackboneConfig, LAYER_NORM_EPS};
use superpos::Result;

const TOLERANCE: f64 = 1e-6;

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// `sum(op(inputs) * w)` for fixed pseudo-random `w`, so every output
/// entry carries a distinct upstream gradient.
fn weighted_loss<F>(tape: &mut Tape<'_>, build: &F, vars: &[Var]) -> Var
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let out = build(tape, vars).unwrap();
    let (r, c) = tape.dims(out);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = tape.constant_owned(r, c, w);
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

fn check<F>(name: &str, inputs: &[Tensor], build: F)
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new(5);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
        let loss = weighted_loss(&mut tape, &build, &vars);
        let grads = tape.backward(loss).unwrap();
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            .collect()
    };
    for (k, input) in inputs.iter().enumerate() {
        let numeric = finite_difference_gradient(
            |x| {
                let mut probe = inputs.to_vec();
                probe[k] = x.clone();
                let mut tape = Tape::new(5);
                let vars: Vec<Var> = probe.iter().map(|t| tape.param(t)).collect();
                let loss = weighted_loss(&mut tape, &build, &vars);
                tape.scalar(loss)
            },
            input,
            DEFAULT_EPSILON,
        );
        let rel = relative_error(&analytic[k], numeric.data());
        assert!(rel <= TOLERANCE, "{name} input {k}: relative error {rel:.3e}");
    }
}

#[test]
fn matmul_and_transpose() {
    check("matmul", &[random(3, 4, 1), random(4, 5, 2)], |t, v| t.matmul(v[0], v[1]));
    check("transpose", &[random(3, 4, 1)], |t, v| Ok(t.transpose(v[0])));
}

#[test]
fn elementwise() {
    let (a, b) = (random(3, 4, 1), random(3, 4, 2));
    check("add", &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]));
    check("mul", &[a.clone(), b], |t, v| t.mul(v[0], v[1]));
    check("scale", &[a.clone()], |t, v| Ok(t.scale(v[0], -2.5)));
    check("relu", &[a.clone()], |t, v| Ok(t.relu(v[0])));
    check("gelu", &[a.clone()], |t, v| Ok(t.gelu(v[0])));
    check("add_row_broadcast", &[a, random(1, 4, 3)], |t, v| t.add_row_broadcast(v[0], v[1]));
}

#[test]
fn softmaxes_and_norms() {
    let a = random(3, 5, 4);
    check("softmax_rows", &[a.clone()], |t, v| Ok(t.softmax_rows(v[0])));
    check("softmax_columns", &[a.clone()], |t, v| Ok(t.softmax_columns(v[0])));
    check("layer_norm_rows", &[a, random(1, 5, 5), random(1, 5, 6)], |t, v| {
        t.layer_norm_rows(v[0], v[1], v[2], LAYER_NORM_EPS)
    });
}

#[test]
fn dropout_with_a_fixed_mask() {
    check("dropout", &[random(4, 6, 7)], |t, v| t.dropout(v[0], 0.3, true));
}

#[test]
fn losses_and_reductions() {
    let a = random(3, 6, 8);
    check("cross_entropy", &[random(1, 6, 9)], |t, v| t.cross_entropy(v[0], 4));
    check("cross_entropy_rows", &[a.clone()], |t, v| t.cross_entropy_rows(v[0], &[0, 5, 2]));
    check("sum", &[a.clone()], |t, v| Ok(t.sum(v[0])));
    check("mean_rows", &[a], |t, v| Ok(t.mean_rows(v[0])));
}

#[test]
fn structural_ops() {
    let (a, b) = (random(2, 3, 10), random(4, 3, 11));
    check("concat_rows", &[a.clone(), b.clone()], |t, v| t.concat_rows(&[v[0], v[1], v[0]]));
    check("concat_cols", &[random(3, 2, 12), random(3, 4, 13)], |t, v| t.concat_cols(&[v[0], v[1]]));
    check("slice_cols", &[b.clone()], |t, v| t.slice_cols(v[0], 1, 2));
    check("slice_rows", &[b.clone()], |t, v| t.slice_rows(v[0], 1, 2));
    check("gather_rows", &[b], |t, v| t.gather_rows(v[0], &[3, 0, 3, 1]));
}

#[test]
fn fused_attention() {
    let lengths = [3, 5, 1];
    let (q, k, v) = (random(9, 8, 14), random(9, 8, 15), random(9, 8, 16));
    check("attention", &[q.clone(), k.clone(), v.clone()], |t, x| {
        t.attention(x[0], x[1], x[2], &lengths, 2, 0.0, false)
    });
    check("attention with dropout", &[q, k, v], |t, x| {
        t.attention(x[0], x[1], x[2], &lengths, 4, 0.25, true)
    });
}

#[test]
fn encoder_weights_and_inputs() {
    let config = BackboneConfig {
        vocab_size: 24,
        model_dim: 8,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 12,
        max_seq_len: 8,
        ..BackboneConfig::default()
    };
    let mut backbone = init_backbone(config).unwrap();
    // larger weights than the init so the checks see real curvature
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (_, t) in backbone.weights_mut().named_tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.3..0.3));
    }
    let seqs: [&[usize]; 2] = [&[9, 10, 11], &[12, 20, 8, 23, 15]];
    let targets = [14, 21];
    let loss_of = |bb: &superpos::backbone::Backbone, with_grads: bool| {
        let mut tape = Tape::new(3);
        let bound = bb.bind(&mut tape, true);
        let mut rows = Vec::new();
        for s in seqs {
            rows.push(bound.embed_rows(&mut tape, s).unwrap());
        }
        let hidden = bound.encode_batch(&mut tape, &rows, 0.1).unwrap();
        let pooled: Vec<Var> = hidden.into_iter().map(|h| tape.mean_rows(h)).collect();
        let stacked = tape.concat_rows(&pooled).unwrap();
        let head = tape.transpose(bound.token_embedding());
        let logits = tape.matmul(stacked, head).unwrap();
        let loss = tape.cross_entropy_rows(logits, &targets).unwrap();
        let value = tape.scalar(loss);
        if !with_grads {
            return (value, Vec::new());
        }
        let grads = tape.backward(loss).unwrap();
        let per: Vec<Vec<f64>> = bound
            .vars()
            .iter()
            .map(|&v| grads.get(v).map(<[f64]>::to_vec).unwrap_or_default())
            .collect();
        (value, per)
    };
    let (_, analytic) = loss_of(&backbone, true);
    let names: Vec<String> = backbone.weights().named_tensors().into_iter().map(|(n, _)| n).collect();
    for (k, name) in names.iter().enumerate() {
        let original = backbone.weights().named_tensors()[k].1.clone();
        let numeric = finite_difference_gradient(
            |x| {
                let mut probe = backbone.clone();
                *probe.weights_mut().named_tensors_mut()[k].1 = x.clone();
                loss_of(&probe, false).0
            },
            &original,
            DEFAULT_EPSILON,
        );
        // key biases shift every score of a query equally, so softmax
        // cancels them and both gradients are noise around zero
        let largest = numeric.data().iter().chain(&analytic[k]).fold(0.0f64, |m, g| m.max(g.abs()));
        if name.ends_with("key_bias") {
            assert!(largest < 1e-8, "{name}: expected a zero gradient, got {largest:.3e}");
            continue;
        }
        let rel = relative_error(&analytic[k], numeric.data());
        assert!(rel <= 1e-5, "{name}: relative error {rel:.3e}");
    }
}
