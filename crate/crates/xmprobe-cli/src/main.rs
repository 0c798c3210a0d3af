//! Command line front end for the probing toolkit.
//!
//! Every subcommand is a thin wrapper over the library: it parses flags into
//! the corresponding config structs, calls one library entry point, and
//! prints or writes the artifacts. Exit code 0 means full success.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use xmprobe::dataset::{load_dataset, load_dataset_lenient, write_dataset};
use xmprobe::error::{Error, Result};
use xmprobe::eval::{aggregate_folds, EvalReport};
use xmprobe::experiment::{
    evaluate_fold, export_human_eval, run_experiment, run_loss_ablation, sweep_context_visibility,
    sweep_visibility_files, write_human_eval_files, ExperimentConfig, HumanEvalBundle,
};
use xmprobe::losses::LossKind;
use xmprobe::probe::{load_checkpoint, train_probe, Precision, TrainConfig};
use xmprobe::report::{
    emit_loss_markdown, emit_markdown, emit_sweep_csv, to_json_pretty, LossAblationRow, SweepPoint,
};
use xmprobe::splits::{make_category_splits, SplitSpec, TestSizes};
use xmprobe::synth::{generate_synthetic, SynthSpec};

#[derive(Parser)]
#[command(
    name = "xmprobe",
    version,
    about = "Cross-modal probing: train and evaluate a language-to-vision probe"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired-feature dataset.
    Synth(SynthArgs),
    /// Validate a dataset directory and print all findings.
    IngestValidate(IngestArgs),
    /// Build seen/unseen category folds for a dataset.
    Split(SplitArgs),
    /// Train one probe on one fold.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint on one fold.
    Eval(EvalArgs),
    /// Run the full multi-fold protocol.
    Run(ProtocolArgs),
    /// Run the full protocol against permuted visual targets.
    Control(ProtocolArgs),
    /// Run the full protocol once per training objective.
    AblateLoss(ProtocolArgs),
    /// Run one experiment per context-visibility value and emit the curve.
    SweepVisibility(SweepArgs),
    /// Sample unseen-test items into a human annotation bundle.
    ExportHumanEval(ExportArgs),
    /// Score a filled-in response sheet against a bundle.
    ScoreHumanEval(ScoreArgs),
    /// Re-emit text output from a saved JSON artifact.
    Report(ReportArgs),
}

/// Training flags shared by `train` and the protocol commands. Unset flags
/// keep the config-file or default value.
#[derive(Args, Clone, Default)]
struct TrainFlags {
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Coupled L2 weight decay.
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Objective: infonce, mse, neg-cosine, or triplet.
    #[arg(long)]
    loss: Option<LossKind>,
    /// LSTM hidden width.
    #[arg(long)]
    hidden: Option<usize>,
    /// Training arithmetic: f32 or f64.
    #[arg(long)]
    precision: Option<Precision>,
}

impl TrainFlags {
    fn apply(&self, config: &mut TrainConfig) {
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.lr {
            config.lr = v;
        }
        if let Some(v) = self.weight_decay {
            config.weight_decay = v;
        }
        if let Some(v) = self.loss {
            config.loss = v;
        }
        if let Some(v) = self.hidden {
            config.hidden = v;
        }
        if let Some(v) = self.precision {
            config.precision = v;
        }
    }
}

/// Flags mirroring ExperimentConfig. A TOML config may supply the baseline;
/// any flag given on the command line overrides the corresponding field.
#[derive(Args, Clone)]
struct ProtocolArgs {
    /// TOML experiment configuration to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the corpus-scale reference protocol instead of the
    /// desk-scale defaults.
    #[arg(long, conflicts_with = "config")]
    reference: bool,
    /// Dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory for all run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Unseen categories held out per fold.
    #[arg(long)]
    unseen: Option<usize>,
    /// Experiment seed; fold seeds and the control permutation derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Recall cutoff; repeat the flag for several values.
    #[arg(short = 'k', long = "k", value_name = "K")]
    ks: Vec<usize>,
    /// Seen-category test pairs per fold (default: a tenth of the seen pairs).
    #[arg(long)]
    seen_test: Option<usize>,
    /// Unseen-category test pairs per fold (default: every unseen pair).
    #[arg(long)]
    unseen_test: Option<usize>,
    /// Validation pairs per fold (default: same as the seen test size).
    #[arg(long)]
    val: Option<usize>,
    #[command(flatten)]
    train: TrainFlags,
}

impl ProtocolArgs {
    fn into_config(self, force_control: bool, dataset_required: bool) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None if self.reference => ExperimentConfig::reference_protocol(
                PathBuf::new(),
                PathBuf::from("run"),
                0,
            ),
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.dataset {
            config.dataset = v;
        }
        if let Some(v) = self.out {
            config.out_dir = v;
        }
        if let Some(v) = self.folds {
            config.folds = v;
        }
        if let Some(v) = self.unseen {
            config.n_unseen = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if !self.ks.is_empty() {
            let mut ks = self.ks;
            ks.sort_unstable();
            ks.dedup();
            config.ks = ks;
        }
        if let Some(v) = self.seen_test {
            config.test_sizes.seen_test = Some(v);
        }
        if let Some(v) = self.unseen_test {
            config.test_sizes.unseen_test = Some(v);
        }
        if let Some(v) = self.val {
            config.test_sizes.val = Some(v);
        }
        self.train.apply(&mut config.train);
        if force_control {
            config.control = true;
        }
        if dataset_required && config.dataset.as_os_str().is_empty() {
            return Err(Error::Config(
                "a dataset directory is required (--dataset or a config file)".into(),
            ));
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Directory the dataset is written into.
    #[arg(long)]
    out: PathBuf,
    /// Generator spec JSON; remaining flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Start from the standard benchmark (50 categories x 20 instances).
    #[arg(long, conflicts_with = "spec")]
    standard: bool,
    /// Number of object categories.
    #[arg(long)]
    categories: Option<usize>,
    /// Instances per category.
    #[arg(long)]
    instances: Option<usize>,
    /// Category latent dimension.
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Instance context dimension.
    #[arg(long)]
    context_dim: Option<usize>,
    /// Language feature width.
    #[arg(long)]
    d_l: Option<usize>,
    /// Visual feature width.
    #[arg(long)]
    d_v: Option<usize>,
    /// Longest token sequence.
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Context visibility in [0, 1].
    #[arg(long)]
    visibility: Option<f64>,
    /// Fraction of records carrying adjectives.
    #[arg(long)]
    adjective_fraction: Option<f64>,
    /// Additive noise scale.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IngestArgs {
    /// Dataset directory to check.
    dataset: PathBuf,
    /// Print the findings as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Directory the fold sidecar files are written into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Unseen categories held out per fold.
    #[arg(long, default_value_t = 10)]
    unseen: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    seen_test: Option<usize>,
    #[arg(long)]
    unseen_test: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Fold sidecar file produced by `split`.
    #[arg(long)]
    split: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the training report JSON.
    #[arg(long)]
    train_report: Option<PathBuf>,
    /// Training seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Recall cutoff; repeat the flag for several values.
    #[arg(short = 'k', long = "k", value_name = "K")]
    ks: Vec<usize>,
    /// Where to write the report JSON; stdout gets the markdown table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Synthetic generator spec JSON swept over the visibility grid.
    #[arg(long)]
    synth_spec: Option<PathBuf>,
    /// Sweep the standard synthetic benchmark.
    #[arg(long, conflicts_with = "synth_spec")]
    standard: bool,
    /// Comma-separated visibility grid for synthetic sweeps.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    lambdas: Vec<f64>,
    /// Pre-extracted dataset directory, one flag per masking rate; each must
    /// carry a context_visibility header tag.
    #[arg(long = "file", conflicts_with_all = ["synth_spec", "standard"])]
    files: Vec<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Items sampled from the unseen test set.
    #[arg(long, default_value_t = 100)]
    sample_size: usize,
    /// Visual candidates per item, true instance included.
    #[arg(long, default_value_t = 100)]
    candidates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving bundle.json (with key) and items.json (without).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// bundle.json written by export-human-eval.
    #[arg(long)]
    bundle: PathBuf,
    /// JSON object mapping item id to the chosen record id.
    #[arg(long)]
    responses: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ReportKind {
    /// EvalReport JSON to a markdown table.
    Eval,
    /// Sweep-point JSON to the curve CSV.
    Sweep,
    /// Loss-ablation JSON to a markdown table.
    Ablation,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON artifact written by run, sweep-visibility, or ablate-loss.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportKind::Eval)]
    kind: ReportKind,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::IngestValidate(args) => cmd_ingest_validate(args),
        Command::Split(args) => cmd_split(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Run(args) => cmd_run(args, false),
        Command::Control(args) => cmd_run(args, true),
        Command::AblateLoss(args) => cmd_ablate_loss(args),
        Command::SweepVisibility(args) => cmd_sweep(args),
        Command::ExportHumanEval(args) => cmd_export_human_eval(args),
        Command::ScoreHumanEval(args) => cmd_score_human_eval(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => SynthSpec::load(path)?,
        None if args.standard => SynthSpec::standard_benchmark(args.seed.unwrap_or(0)),
        None => SynthSpec::default(),
    };
    if let Some(v) = args.categories {
        spec.n_categories = v;
    }
    if let Some(v) = args.instances {
        spec.instances_per_category = v;
    }
    if let Some(v) = args.latent_dim {
        spec.latent_category_dim = v;
    }
    if let Some(v) = args.context_dim {
        spec.context_dim = v;
    }
    if let Some(v) = args.d_l {
        spec.d_l = v;
    }
    if let Some(v) = args.d_v {
        spec.d_v = v;
    }
    if let Some(v) = args.max_tokens {
        spec.max_token_count = v;
    }
    if let Some(v) = args.visibility {
        spec.context_visibility = v;
    }
    if let Some(v) = args.adjective_fraction {
        spec.adjective_fraction = v;
    }
    if let Some(v) = args.noise {
        spec.noise_scale = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    spec.validate()?;

    let dataset = generate_synthetic(&spec)?;
    let files = write_dataset(&dataset, &args.out)?;
    spec.save(&args.out.join("synth_spec.json"))?;
    println!(
        "wrote {} records ({} categories, d_L={}, d_V={}) to {}",
        dataset.len(),
        spec.n_categories,
        spec.d_l,
        spec.d_v,
        args.out.display()
    );
    for file in files {
        println!("  {}", file.display());
    }
    Ok(())
}

fn cmd_ingest_validate(args: IngestArgs) -> Result<()> {
    let (dataset, report) = load_dataset_lenient(&args.dataset)?;
    if args.json {
        #[derive(serde::Serialize)]
        struct Findings {
            records: usize,
            d_l: usize,
            d_v: usize,
            violations: Vec<String>,
            warnings: Vec<String>,
        }
        let findings = Findings {
            records: dataset.len(),
            d_l: dataset.header.d_l,
            d_v: dataset.header.d_v,
            violations: report.violations.iter().map(|v| v.to_string()).collect(),
            warnings: report.warnings.clone(),
        };
        println!("{}", to_json_pretty(&findings)?);
    } else {
        println!(
            "{}: {} records, d_L={}, d_V={}",
            args.dataset.display(),
            dataset.len(),
            dataset.header.d_l,
            dataset.header.d_v
        );
        for violation in &report.violations {
            println!("violation: {violation}");
        }
        for warning in &report.warnings {
            println!("warning: {warning}");
        }
        if report.is_clean() {
            println!("ok");
        }
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(Error::Format(format!(
            "{} validation violation(s)",
            report.violations.len()
        )))
    }
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let sizes = TestSizes {
        seen_test: args.seen_test,
        unseen_test: args.unseen_test,
        val: args.val,
    };
    let splits = make_category_splits(&dataset, args.folds, args.unseen, args.seed, sizes)?;
    fs::create_dir_all(&args.out)?;
    for split in &splits {
        let path = args.out.join(format!("fold{}_split.json", split.fold_index));
        split.save(&path)?;
        println!(
            "fold {}: {} train / {} val / {} seen-test / {} unseen-test -> {}",
            split.fold_index,
            split.train_ids.len(),
            split.val_ids.len(),
            split.seen_test_ids.len(),
            split.unseen_test_ids.len(),
            path.display()
        );
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let split = SplitSpec::load(&args.split)?;
    let mut config = TrainConfig {
        seed: args.seed,
        ..TrainConfig::default()
    };
    args.flags.apply(&mut config);

    let (probe, report) = train_probe(&dataset, &split, &config)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    probe.save_checkpoint(&args.out, config.seed, &config.digest()?)?;
    if let Some(path) = &args.train_report {
        fs::write(path, to_json_pretty(&report)?)?;
    }
    println!(
        "trained fold {} for {} epochs: first-batch loss {:.4}, final epoch mean {:.4}",
        split.fold_index,
        config.epochs,
        report.initial_loss,
        report.epoch_mean_loss.last().copied().unwrap_or(f64::NAN)
    );
    if let Some(ir1) = report.val_ir1.last() {
        println!("validation IR@1: {:.3}", ir1);
    }
    println!("checkpoint: {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let split = SplitSpec::load(&args.split)?;
    let (probe, _, _) = load_checkpoint(&args.checkpoint)?;
    let mut ks = if args.ks.is_empty() {
        vec![1, 5]
    } else {
        args.ks
    };
    ks.sort_unstable();
    ks.dedup();

    let fold = evaluate_fold(&dataset, &split, &probe, &ks)?;
    let report = aggregate_folds(vec![fold], &ks)?;
    print!("{}", emit_markdown(&report));
    if let Some(path) = &args.out {
        fs::write(path, to_json_pretty(&report)?)?;
        println!();
        println!("report: {}", path.display());
    }
    Ok(())
}

fn cmd_run(args: ProtocolArgs, force_control: bool) -> Result<()> {
    let config = args.into_config(force_control, true)?;
    let (manifest, report) = run_experiment(&config)?;
    print!("{}", emit_markdown(&report));
    println!();
    println!("run artifacts in {}", config.out_dir.display());
    println!("  report: {}", manifest.report_json.display());
    println!("  table:  {}", manifest.report_markdown.display());
    Ok(())
}

fn cmd_ablate_loss(args: ProtocolArgs) -> Result<()> {
    let config = args.into_config(false, true)?;
    let dataset = load_dataset(&config.dataset)?;
    let rows = run_loss_ablation(&dataset, &config)?;
    let markdown = emit_loss_markdown(&rows);
    fs::create_dir_all(&config.out_dir)?;
    fs::write(config.out_dir.join("ablation.json"), to_json_pretty(&rows)?)?;
    fs::write(config.out_dir.join("ablation.md"), &markdown)?;
    print!("{markdown}");
    println!();
    println!("ablation artifacts in {}", config.out_dir.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let synthetic = args.synth_spec.is_some() || args.standard;
    if !synthetic && args.files.is_empty() {
        return Err(Error::Config(
            "choose a sweep source: --synth-spec, --standard, or --file".into(),
        ));
    }
    let config = args.protocol.into_config(false, false)?;
    let points = if synthetic {
        let base = match &args.synth_spec {
            Some(path) => SynthSpec::load(path)?,
            None => SynthSpec::standard_benchmark(config.seed),
        };
        sweep_context_visibility(&base, &args.lambdas, &config)?
    } else {
        sweep_visibility_files(&args.files, &config)?
    };
    let csv = emit_sweep_csv(&points);
    fs::create_dir_all(&config.out_dir)?;
    fs::write(config.out_dir.join("sweep.json"), to_json_pretty(&points)?)?;
    fs::write(config.out_dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_export_human_eval(args: ExportArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let split = SplitSpec::load(&args.split)?;
    let (probe, _, _) = load_checkpoint(&args.checkpoint)?;
    let bundle = export_human_eval(
        &dataset,
        &split,
        &probe,
        args.sample_size,
        args.candidates,
        args.seed,
    )?;
    let (bundle_path, items_path) = write_human_eval_files(&bundle, &args.out)?;
    println!(
        "{} items x {} candidates, probe IR@1 {:.3}",
        bundle.sample_size, bundle.candidate_count, bundle.model_ir1
    );
    println!("annotator view: {}", items_path.display());
    println!("scoring bundle: {}", bundle_path.display());
    Ok(())
}

fn cmd_score_human_eval(args: ScoreArgs) -> Result<()> {
    let bundle: HumanEvalBundle = serde_json::from_str(&fs::read_to_string(&args.bundle)?)?;
    let raw: BTreeMap<String, u64> = serde_json::from_str(&fs::read_to_string(&args.responses)?)?;
    let mut responses = BTreeMap::new();
    for (key, value) in raw {
        let item_id: usize = key
            .parse()
            .map_err(|_| Error::Format(format!("response key '{key}' is not an item id")))?;
        responses.insert(item_id, value);
    }
    let human = bundle.score(&responses)?;
    println!("human IR@1: {human:.3}");
    println!("probe IR@1: {:.3}", bundle.model_ir1);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)?;
    let output = match args.kind {
        ReportKind::Eval => {
            let report: EvalReport = serde_json::from_str(&text)?;
            emit_markdown(&report)
        }
        ReportKind::Sweep => {
            let points: Vec<SweepPoint> = serde_json::from_str(&text)?;
            emit_sweep_csv(&points)
        }
        ReportKind::Ablation => {
            let rows: Vec<LossAblationRow> = serde_json::from_str(&text)?;
            emit_loss_markdown(&rows)
        }
    };
    match &args.out {
        Some(path) => fs::write(path, output)?,
        None => print!("{output}"),
    }
    Ok(())
}
