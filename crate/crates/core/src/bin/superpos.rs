use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use superpos::backbone::{init_backbone, load_checkpoint, masked_token_accuracy, pretrain, save_checkpoint};
use superpos::harness::{
    artifacts, compare_methods, prompt_similarity_matrix, render_stability, run_dropout_comparison,
    run_experiment, run_m_ablation, stability_report, write_similarity_csv, HarnessConfig, Method, ScoreTable,
};
use superpos::reparam::PromptCheckpoint;
use superpos::tasks::generate_pretrain_corpus;
use superpos::{Error, Result};

#[derive(Parser)]
#[command(name = "superpos", version, about = "Soft-prompt tuning experiments over a small frozen encoder")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a backbone with masked-token prediction and save it.
    Pretrain(Common),
    /// Train one configuration.
    Run(Common),
    /// Compare methods across tasks and seeds.
    Compare(Common),
    /// Sweep the number of sampled embeddings.
    AblateM(Common),
    /// Train each method with and without backbone dropout.
    AblateDropout(Common),
    /// Cosine similarity of learned superposition weights.
    AnalyzePrompts {
        #[command(flatten)]
        common: Common,
        /// Prompt checkpoint written by `run`.
        #[arg(long)]
        prompt: PathBuf,
    },
    /// Standardized mean and std per method from a comparison summary.
    Stability {
        #[command(flatten)]
        common: Common,
        /// `summary.json` written by `compare`.
        #[arg(long)]
        scores: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    method: Option<String>,
    /// Disable dropout in the frozen backbone during training.
    #[arg(long)]
    no_dropout: bool,
    /// Number of sampled embeddings; repeat for `ablate-m`.
    #[arg(long)]
    m: Vec<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Backbone checkpoint to load.
    #[arg(long)]
    backbone: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<HarnessConfig> {
        let mut cfg: HarnessConfig = match &self.config {
            Some(path) => artifacts::read_json(path)?,
            None => HarnessConfig::default(),
        };
        let exp = &mut cfg.experiment;
        if let Some(seed) = self.seed {
            exp.seed = seed;
            cfg.seeds = vec![seed];
            cfg.backbone.seed = seed;
            cfg.pretrain.seed = seed;
        }
        if let Some(task) = &self.task {
            exp.task = task.clone();
            cfg.tasks = vec![task.clone()];
        }
        if let Some(method) = &self.method {
            let method = Method::from_name(method)?;
            exp.method = method;
            cfg.methods = vec![method];
        }
        if self.no_dropout {
            exp.dropout = false;
        }
        if let Some(&m) = self.m.first() {
            exp.m = m;
            cfg.m_values = self.m.clone();
        }
        if let Some(epochs) = self.epochs {
            exp.epochs = epochs;
        }
        if let Some(path) = &self.backbone {
            exp.backbone_path = path.clone();
        }
        Ok(cfg)
    }
}

fn load_frozen(cfg: &HarnessConfig) -> Result<superpos::backbone::FrozenBackbone> {
    Ok(load_checkpoint(&cfg.experiment.backbone_path)?.freeze())
}

fn cmd_pretrain(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let out = &common.out;
    artifacts::ensure_dir(out)?;
    let corpus = generate_pretrain_corpus(cfg.corpus_seed, cfg.corpus_size_or_default());
    let mut backbone = init_backbone(cfg.backbone.clone())?;
    let report = pretrain(&mut backbone, &corpus, &cfg.pretrain)?;
    let held_out = generate_pretrain_corpus(cfg.corpus_seed.wrapping_add(1), 500);
    let accuracy = masked_token_accuracy(&backbone, &held_out, cfg.pretrain.mask_prob, 0)?;
    let path = out.join("backbone.json");
    save_checkpoint(&backbone, &path)?;
    artifacts::write_json(
        &out.join("pretrain.json"),
        &serde_json::json!({
            "config": cfg.backbone,
            "pretrain": cfg.pretrain,
            "parameter_count": backbone.weights().parameter_count(),
            "weights_hash": format!("{:016x}", backbone.weights_hash()),
            "masked_token_accuracy": accuracy,
            "loss_curve": report.loss_curve,
        }),
    )?;
    println!(
        "saved {} ({} parameters), held-out masked-token accuracy {:.3}",
        path.display(),
        backbone.weights().parameter_count(),
        accuracy
    );
    Ok(())
}

fn cmd_run(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let result = run_experiment(&cfg.experiment)?;
    result.write_artifacts(&common.out)?;
    println!(
        "{} on {}: best val {:.2} at epoch {}, test {:.2}{} ({} trainable parameters)",
        cfg.experiment.method.name(),
        cfg.experiment.task,
        result.best_val_score,
        result.best_epoch,
        result.test_score,
        if result.failed { " [failed]" } else { "" },
        result.trainable_params
    );
    Ok(())
}

fn cmd_compare(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let backbone = load_frozen(&cfg)?;
    let cmp = compare_methods(
        &cfg.experiment,
        &cfg.tasks_or_suite(),
        &cfg.methods_or_default(),
        &cfg.seeds_or_default(),
        &backbone,
    )?;
    cmp.write(&common.out)?;
    print_table(&cmp.table);
    Ok(())
}

fn print_table(table: &ScoreTable) {
    print!("{:<16}", "method");
    for t in &table.tasks {
        print!("{t:>12}");
    }
    println!("{:>10}", "avg");
    for (i, m) in table.methods.iter().enumerate() {
        print!("{m:<16}");
        for (j, v) in table.scores[i].iter().enumerate() {
            let mark = if table.failures[i][j] > 0 { "†" } else { " " };
            print!("{v:>11.1}{mark}");
        }
        println!("{:>10.1}", table.average[i]);
    }
}

fn cmd_ablate_m(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let backbone = load_frozen(&cfg)?;
    let ms = if cfg.m_values.is_empty() {
        vec![1, 4, 16, 64, 128]
    } else {
        cfg.m_values.clone()
    };
    let ablation = run_m_ablation(&cfg.experiment, &cfg.tasks_or_suite(), &ms, &cfg.seeds_or_default(), &backbone)?;
    ablation.write(&common.out)?;
    for p in &ablation.points {
        println!("m={:<5} best {:.2}  test {:.2}", p.m, p.mean_best_score, p.mean_test_score);
    }
    Ok(())
}

fn cmd_ablate_dropout(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let backbone = load_frozen(&cfg)?;
    let cmp = run_dropout_comparison(
        &cfg.experiment,
        &cfg.tasks_or_suite(),
        &cfg.methods_or_default(),
        &cfg.seeds_or_default(),
        &backbone,
    )?;
    cmp.write(&common.out)?;
    for s in &cmp.summary {
        println!(
            "{:<16} with {:>6.2}  without {:>6.2}  delta {:>+6.2}  steps-to-90% delta {:>+6.2}",
            s.method.name(),
            s.mean_score_with,
            s.mean_score_without,
            s.score_delta,
            s.steps_delta
        );
    }
    Ok(())
}

fn cmd_analyze(common: &Common, prompt: &Path) -> Result<()> {
    let ckpt = PromptCheckpoint::load(prompt)?;
    let sim = prompt_similarity_matrix(&ckpt.params)?;
    artifacts::ensure_dir(&common.out)?;
    write_similarity_csv(&common.out.join("similarity.csv"), &sim)?;
    let n = sim.values.dims().0;
    for i in 0..n {
        let row: Vec<String> = sim.values.row(i).iter().map(|v| format!("{v:6.3}")).collect();
        println!("{}", row.join(" "));
    }
    if !sim.zero_vectors.is_empty() {
        eprintln!("zero weight vectors at {:?}", sim.zero_vectors);
    }
    Ok(())
}

fn cmd_stability(common: &Common, scores: &Path) -> Result<()> {
    let value: serde_json::Value = artifacts::read_json(scores)?;
    let table_value = value.get("table").cloned().unwrap_or(value);
    let table: ScoreTable = serde_json::from_value(table_value)?;
    let rows = stability_report(&table)?;
    artifacts::ensure_dir(&common.out)?;
    artifacts::write_json(&common.out.join("stability.json"), &rows)?;
    print!("{}", render_stability(&rows));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match &cli.command {
        Command::Pretrain(c) => cmd_pretrain(c),
        Command::Run(c) => cmd_run(c),
        Command::Compare(c) => cmd_compare(c),
        Command::AblateM(c) => cmd_ablate_m(c),
        Command::AblateDropout(c) => cmd_ablate_dropout(c),
        Command::AnalyzePrompts { common, prompt } => cmd_analyze(common, prompt),
        Command::Stability { common, scores } => cmd_stability(common, scores),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Io { .. }) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
