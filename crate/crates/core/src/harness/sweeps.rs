//! Grids of runs: method comparison, dropout on/off pairs, and m ablation.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::{self, format_f64};
use super::config::{ExperimentConfig, Method};
use super::run::{run_with_backbone, task_spec, RunResult};
use crate::backbone::FrozenBackbone;
use crate::error::{Error, Result};
use crate::tasks::{generate_task, Dataset, TaskSpec};

/// Runs every config in parallel; results come back in input order.
pub fn run_grid(configs: &[ExperimentConfig], backbone: &FrozenBackbone) -> Result<Vec<RunResult>> {
    let mut data: BTreeMap<(String, u64), (TaskSpec, Dataset)> = BTreeMap::new();
    for c in configs {
        let key = (c.task.clone(), c.data_seed);
        if !data.contains_key(&key) {
            let spec = task_spec(c)?;
            let ds = generate_task(&spec)?;
            data.insert(key, (spec, ds));
        }
    }
    configs
        .par_iter()
        .map(|c| {
            let (spec, ds) = &data[&(c.task.clone(), c.data_seed)];
            run_with_backbone(c, backbone, spec, ds)
        })
        .collect()
}

/// Method x task matrix of seed-averaged table scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub methods: Vec<String>,
    pub tasks: Vec<String>,
    /// `scores[method][task]`.
    pub scores: Vec<Vec<f64>>,
    /// Failed runs per cell; each contributed a 0.
    pub failures: Vec<Vec<usize>>,
    /// Per-method mean over tasks.
    pub average: Vec<f64>,
}

impl ScoreTable {
    pub fn from_runs(runs: &[RunResult], labels: &[String], tasks: &[String], label_of: impl Fn(&RunResult) -> String) -> Self {
        let mut sums = vec![vec![0.0; tasks.len()]; labels.len()];
        let mut counts = vec![vec![0usize; tasks.len()]; labels.len()];
        let mut failures = vec![vec![0usize; tasks.len()]; labels.len()];
        for r in runs {
            let Some(mi) = labels.iter().position(|l| *l == label_of(r)) else { continue };
            let Some(ti) = tasks.iter().position(|t| *t == r.config.task) else { continue };
            sums[mi][ti] += r.test_score;
            counts[mi][ti] += 1;
            failures[mi][ti] += usize::from(r.failed);
        }
        let scores: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(row, c)| row.iter().zip(c).map(|(s, &n)| s / n.max(1) as f64).collect())
            .collect();
        let average = scores.iter().map(|row| row.iter().sum::<f64>() / row.len().max(1) as f64).collect();
        Self {
            methods: labels.to_vec(),
            tasks: tasks.to_vec(),
            scores,
            failures,
            average,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["method".to_string()];
        header.extend(self.tasks.iter().cloned());
        header.push("avg".into());
        w.write_record(&header)?;
        for (i, m) in self.methods.iter().enumerate() {
            let mut row = vec![m.clone()];
            row.extend(self.scores[i].iter().map(|&v| format_f64(v)));
            row.push(format_f64(self.average[i]));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Cells as options, the input expected by standardized scoring.
    pub fn cells(&self) -> Vec<Vec<Option<f64>>> {
        self.scores.iter().map(|row| row.iter().map(|&v| Some(v)).collect()).collect()
    }
}

fn curve_name(r: &RunResult) -> String {
    format!(
        "{}_{}_seed{}{}_m{}.csv",
        r.config.method.name(),
        r.config.task,
        r.config.seed,
        if r.config.dropout { "" } else { "_nodrop" },
        r.config.m
    )
}

/// One CSV per run under `dir/curves`.
pub fn write_curves(dir: &Path, runs: &[RunResult]) -> Result<()> {
    let curves = dir.join("curves");
    artifacts::ensure_dir(&curves)?;
    for r in runs {
        artifacts::write_curve_csv(&curves.join(curve_name(r)), &r.curve)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub table: ScoreTable,
    pub runs: Vec<RunResult>,
}

impl Comparison {
    pub fn write(&self, dir: &Path) -> Result<()> {
        artifacts::ensure_dir(dir)?;
        write_curves(dir, &self.runs)?;
        self.table.write_csv(&dir.join("table.csv"))?;
        artifacts::write_json(&dir.join("summary.json"), self)
    }
}

fn grid(base: &ExperimentConfig, tasks: &[String], methods: &[Method], seeds: &[u64], dropout: &[bool]) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for &method in methods {
        for task in tasks {
            for &seed in seeds {
                for &d in dropout {
                    out.push(ExperimentConfig {
                        method,
                        task: task.clone(),
                        seed,
                        dropout: d,
                        ..base.clone()
                    });
                }
            }
        }
    }
    out
}

fn check_nonempty(tasks: &[String], seeds: &[u64]) -> Result<()> {
    if tasks.is_empty() || seeds.is_empty() {
        return Err(Error::Parameter("need at least one task and one seed".into()));
    }
    Ok(())
}

/// Every method on every task for every seed, averaged over seeds.
pub fn compare_methods(
    base: &ExperimentConfig,
    tasks: &[String],
    methods: &[Method],
    seeds: &[u64],
    backbone: &FrozenBackbone,
) -> Result<Comparison> {
    check_nonempty(tasks, seeds)?;
    if methods.is_empty() {
        return Err(Error::Parameter("need at least one method".into()));
    }
    let configs = grid(base, tasks, methods, seeds, &[base.dropout]);
    let runs = run_grid(&configs, backbone)?;
    let labels: Vec<String> = methods.iter().map(|m| m.name().to_string()).collect();
    let table = ScoreTable::from_runs(&runs, &labels, tasks, |r| r.config.method.name().to_string());
    Ok(Comparison {
        seeds: seeds.to_vec(),
        table,
        runs,
    })
}

/// Score and convergence of one run in a dropout pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub score: f64,
    pub steps_to_90: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutPair {
    pub method: Method,
    pub task: String,
    pub seed: u64,
    pub with_dropout: ConditionStats,
    pub without_dropout: ConditionStats,
}

impl DropoutPair {
    /// `(score, steps)` differences, without minus with dropout.
    pub fn delta(&self) -> (f64, f64) {
        (
            self.without_dropout.score - self.with_dropout.score,
            self.without_dropout.steps_to_90 as f64 - self.with_dropout.steps_to_90 as f64,
        )
    }

    pub fn swapped(&self) -> Self {
        Self {
            with_dropout: self.without_dropout,
            without_dropout: self.with_dropout,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSummary {
    pub method: Method,
    pub mean_score_with: f64,
    pub mean_score_without: f64,
    pub mean_steps_with: f64,
    pub mean_steps_without: f64,
    pub score_delta: f64,
    pub steps_delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DropoutComparison {
    pub pairs: Vec<DropoutPair>,
    pub summary: Vec<DropoutSummary>,
    pub runs: Vec<RunResult>,
}

impl DropoutComparison {
    pub fn write(&self, dir: &Path) -> Result<()> {
        artifacts::ensure_dir(dir)?;
        write_curves(dir, &self.runs)?;
        artifacts::write_json(&dir.join("summary.json"), self)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Each (method, task, seed) trained once with and once without dropout.
pub fn run_dropout_comparison(
    base: &ExperimentConfig,
    tasks: &[String],
    methods: &[Method],
    seeds: &[u64],
    backbone: &FrozenBackbone,
) -> Result<DropoutComparison> {
    check_nonempty(tasks, seeds)?;
    let configs = grid(base, tasks, methods, seeds, &[true, false]);
    let runs = run_grid(&configs, backbone)?;
    let stats = |r: &RunResult| ConditionStats {
        score: r.test_score,
        steps_to_90: r.steps_to_fraction(0.9),
    };
    let pairs: Vec<DropoutPair> = runs
        .chunks_exact(2)
        .map(|pair| DropoutPair {
            method: pair[0].config.method,
            task: pair[0].config.task.clone(),
            seed: pair[0].config.seed,
            with_dropout: stats(&pair[0]),
            without_dropout: stats(&pair[1]),
        })
        .collect();
    let summary = methods
        .iter()
        .map(|&method| {
            let mine: Vec<&DropoutPair> = pairs.iter().filter(|p| p.method == method).collect();
            let with = mean(mine.iter().map(|p| p.with_dropout.score));
            let without = mean(mine.iter().map(|p| p.without_dropout.score));
            let steps_with = mean(mine.iter().map(|p| p.with_dropout.steps_to_90 as f64));
            let steps_without = mean(mine.iter().map(|p| p.without_dropout.steps_to_90 as f64));
            DropoutSummary {
                method,
                mean_score_with: with,
                mean_score_without: without,
                mean_steps_with: steps_with,
                mean_steps_without: steps_without,
                score_delta: without - with,
                steps_delta: steps_without - steps_with,
            }
        })
        .collect();
    Ok(DropoutComparison { pairs, summary, runs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MPoint {
    pub m: usize,
    /// Mean best validation score over tasks and seeds.
    pub mean_best_score: f64,
    pub mean_test_score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MAblation {
    pub points: Vec<MPoint>,
    pub runs: Vec<RunResult>,
}

impl MAblation {
    pub fn write(&self, dir: &Path) -> Result<()> {
        artifacts::ensure_dir(dir)?;
        write_curves(dir, &self.runs)?;
        let series: Vec<(f64, f64)> = self.points.iter().map(|p| (p.m as f64, p.mean_best_score)).collect();
        artifacts::write_series_csv(&dir.join("m_series.csv"), "m", "score", &series)?;
        artifacts::write_json(&dir.join("summary.json"), self)
    }
}

/// SuperPos runs that differ only in `m`.
pub fn run_m_ablation(
    base: &ExperimentConfig,
    tasks: &[String],
    m_values: &[usize],
    seeds: &[u64],
    backbone: &FrozenBackbone,
) -> Result<MAblation> {
    check_nonempty(tasks, seeds)?;
    let v = backbone.config().vocab_size;
    if let Some(&bad) = m_values.iter().find(|&&m| m == 0 || m > v) {
        return Err(Error::Parameter(format!("m={bad} outside 1..={v}")));
    }
    let mut configs = Vec::new();
    for &m in m_values {
        let with_m = ExperimentConfig {
            method: Method::Superpos,
            m,
            ..base.clone()
        };
        configs.extend(grid(&with_m, tasks, &[Method::Superpos], seeds, &[base.dropout]));
    }
    let runs = run_grid(&configs, backbone)?;
    let points = m_values
        .iter()
        .map(|&m| {
            let mine = || runs.iter().filter(move |r| r.config.m == m);
            MPoint {
                m,
                mean_best_score: mean(mine().map(|r| if r.failed { 0.0 } else { r.best_val_score })),
                mean_test_score: mean(mine().map(|r| r.test_score)),
            }
        })
        .collect();
    Ok(MAblation { points, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_delta_antisymmetric() {
        let p = DropoutPair {
            method: Method::Simple,
            task: "parity".into(),
            seed: 0,
            with_dropout: ConditionStats {
                score: 60.0,
                steps_to_90: 12,
            },
            without_dropout: ConditionStats {
                score: 70.5,
                steps_to_90: 5,
            },
        };
        let (ds, dt) = p.delta();
        let (ss, st) = p.swapped().delta();
        assert_eq!((ds, dt), (-ss, -st));
    }

    #[test]
    fn grid_varies_only_requested_fields() {
        let base = ExperimentConfig::default();
        let g = grid(&base, &["parity".into(), "order".into()], &[Method::Simple], &[3, 4], &[true, false]);
        assert_eq!(g.len(), 8);
        assert!(g.iter().all(|c| c.m == base.m && c.epochs == base.epochs));
        assert!(g[0].dropout && !g[1].dropout && g[0].seed == g[1].seed);
    }
}
