use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Example, Generator, Target, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::vocab::{self, symbol};

const PARITY_MARK: usize = 0;
const MAJORITY_A: usize = 4;
const MAJORITY_B: usize = 5;
const ORDER_FIRST: usize = 6;
const ORDER_SECOND: usize = 7;
const RATIO_A: usize = 2;
const RATIO_B: usize = 3;
/// Symbols at or above this index are free fillers for every task.
const FILLER_START: usize = 8;
const MAX_ATTEMPTS: usize = 100_000;

fn fillers() -> Vec<usize> {
    (FILLER_START..vocab::SYMBOLS.len()).map(symbol).collect()
}

/// Builds train/val/test splits as a pure function of `spec`.
///
/// Labels cycle within each split so classes (or regression bins) are
/// balanced; a global seen-set keeps the splits disjoint.
pub fn generate_task(spec: &TaskSpec) -> Result<Dataset> {
    spec.validate(vocab::LAYOUT_SIZE)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.generator_seed ^ (spec.generator as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut seen = HashSet::new();
    let mut split = |size: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Example>> {
        let mut out = Vec::with_capacity(size);
        for i in 0..size {
            let label = i % spec.num_labels();
            let mut attempts = 0;
            loop {
                let ex = sample(spec, label, rng);
                if seen.insert(ex.tokens.clone()) {
                    out.push(ex);
                    break;
                }
                attempts += 1;
                if attempts > MAX_ATTEMPTS {
                    return Err(Error::Data(format!(
                        "task {}: could not draw a fresh example for label {label}",
                        spec.name
                    )));
                }
            }
        }
        out.shuffle(rng);
        Ok(out)
    };
    let train = split(spec.sizes.train, &mut rng)?;
    let val = split(spec.sizes.val, &mut rng)?;
    let test = split(spec.sizes.test, &mut rng)?;
    Ok(Dataset { train, val, test })
}

fn sample(spec: &TaskSpec, label: usize, rng: &mut ChaCha8Rng) -> Example {
    let fill = fillers();
    let len = rng.gen_range(spec.min_len..=spec.max_len);
    let random_fill = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> { (0..n).map(|_| *fill.choose(rng).unwrap()).collect() };
    let insert_all = |base: &mut Vec<usize>, items: &[usize], rng: &mut ChaCha8Rng| {
        for &it in items {
            let pos = rng.gen_range(0..=base.len());
            base.insert(pos, it);
        }
    };
    match spec.generator {
        Generator::Parity => {
            let count = if label == 1 {
                *[1, 3].choose(rng).unwrap()
            } else {
                *[2, 4].choose(rng).unwrap()
            };
            let mut tokens = random_fill(len.saturating_sub(count).max(1), rng);
            insert_all(&mut tokens, &vec![symbol(PARITY_MARK); count], rng);
            Example {
                tokens,
                target: Target::Class(label),
            }
        }
        Generator::Majority => {
            let total = *[3, 5, 7].choose(rng).unwrap();
            let minority = rng.gen_range(0..=total / 2);
            let (a, b) = if label == 0 {
                (total - minority, minority)
            } else {
                (minority, total - minority)
            };
            let mut tokens = random_fill(len.saturating_sub(total).max(1), rng);
            let mut items = vec![symbol(MAJORITY_A); a];
            items.extend(vec![symbol(MAJORITY_B); b]);
            insert_all(&mut tokens, &items, rng);
            Example {
                tokens,
                target: Target::Class(label),
            }
        }
        Generator::PairMatch => {
            let seg = rng.gen_range(3..=5);
            let first = random_fill(seg, rng);
            let mut second = first.clone();
            second.shuffle(rng);
            if label == 0 {
                let pos = rng.gen_range(0..seg);
                let old = second[pos];
                let replacement = loop {
                    let s = *fill.choose(rng).unwrap();
                    if s != old {
                        break s;
                    }
                };
                second[pos] = replacement;
            }
            let mut tokens = first;
            tokens.push(vocab::SEP);
            tokens.extend(second);
            Example {
                tokens,
                target: Target::Class(label),
            }
        }
        Generator::Order => {
            let mut tokens = random_fill(len.saturating_sub(2).max(1), rng);
            let i = rng.gen_range(0..=tokens.len());
            let j = rng.gen_range(0..=tokens.len());
            let (lo, hi) = (i.min(j), i.max(j));
            let (early, late) = if label == 1 {
                (symbol(ORDER_FIRST), symbol(ORDER_SECOND))
            } else {
                (symbol(ORDER_SECOND), symbol(ORDER_FIRST))
            };
            tokens.insert(hi, late);
            tokens.insert(lo, early);
            Example {
                tokens,
                target: Target::Class(label),
            }
        }
        Generator::RatioReg => {
            let bins = match spec.kind {
                TaskKind::Regression { bins } => bins,
                TaskKind::Classification { classes } => classes,
            };
            let total = bins - 1;
            let a = label;
            let mut tokens = vec![symbol(RATIO_A); a];
            tokens.extend(vec![symbol(RATIO_B); total - a]);
            tokens.shuffle(rng);
            let extra = rng.gen_range(0..=3);
            let items = random_fill(extra, rng);
            insert_all(&mut tokens, &items, rng);
            Example {
                tokens,
                target: Target::Value(a as f64 / total as f64),
            }
        }
    }
}

/// Recomputes the target from the tokens using the generating rule.
pub fn evaluate_rule(generator: Generator, tokens: &[usize]) -> Target {
    let count = |s: usize| tokens.iter().filter(|&&t| t == symbol(s)).count();
    match generator {
        Generator::Parity => Target::Class(count(PARITY_MARK) % 2),
        Generator::Majority => Target::Class(usize::from(count(MAJORITY_B) > count(MAJORITY_A))),
        Generator::PairMatch => {
            let sep = tokens.iter().position(|&t| t == vocab::SEP).unwrap_or(tokens.len());
            let mut a = tokens[..sep].to_vec();
            let mut b = tokens.get(sep + 1..).unwrap_or(&[]).to_vec();
            a.sort_unstable();
            b.sort_unstable();
            Target::Class(usize::from(a == b))
        }
        Generator::Order => {
            let first = tokens.iter().position(|&t| t == symbol(ORDER_FIRST));
            let second = tokens.iter().position(|&t| t == symbol(ORDER_SECOND));
            Target::Class(usize::from(first < second))
        }
        Generator::RatioReg => {
            let (a, b) = (count(RATIO_A), count(RATIO_B));
            Target::Value(if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_evaluator_solves_every_generator() {
        for spec in TaskSpec::suite(11) {
            let data = generate_task(&spec).unwrap();
            for ex in data.train.iter().chain(&data.val).chain(&data.test) {
                assert_eq!(evaluate_rule(spec.generator, &ex.tokens), ex.target, "{}", spec.name);
                assert!(ex.tokens.iter().all(|&t| t < vocab::LAYOUT_SIZE));
            }
        }
    }

    #[test]
    fn labels_balanced_within_two_percent() {
        for spec in TaskSpec::suite(5) {
            let data = generate_task(&spec).unwrap();
            for split in [&data.train, &data.val, &data.test] {
                let mut counts = vec![0usize; spec.num_labels()];
                for ex in split.iter() {
                    counts[spec.label_index(ex.target)] += 1;
                }
                let expected = 1.0 / spec.num_labels() as f64;
                for c in counts {
                    let share = c as f64 / split.len() as f64;
                    assert!((share - expected).abs() <= 0.02, "{}: {share}", spec.name);
                }
            }
        }
    }

    #[test]
    fn parity_has_two_balanced_classes() {
        let spec = TaskSpec::builtin(Generator::Parity, 0);
        let data = generate_task(&spec).unwrap();
        let ones = data.train.iter().filter(|e| e.target == Target::Class(1)).count();
        assert_eq!(spec.num_labels(), 2);
        assert!((ones as f64 / data.train.len() as f64 - 0.5).abs() <= 0.02);
    }

    #[test]
    fn generation_is_pure() {
        let spec = TaskSpec::builtin(Generator::Majority, 9);
        assert_eq!(generate_task(&spec).unwrap(), generate_task(&spec).unwrap());
    }

    #[test]
    fn splits_pairwise_disjoint() {
        for spec in TaskSpec::suite(2) {
            let data = generate_task(&spec).unwrap();
            let set = |s: &[Example]| s.iter().map(|e| e.tokens.clone()).collect::<HashSet<_>>();
            let (a, b, c) = (set(&data.train), set(&data.val), set(&data.test));
            assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c), "{}", spec.name);
        }
    }
}
