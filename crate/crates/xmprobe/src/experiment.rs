//! Experiment orchestration: the full multi-fold protocol, the control run,
//! loss ablations, context-visibility sweeps, and the human-evaluation
//! export. Every stage is a pure function of its configuration and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_dataset, Dataset};
use crate::error::{Error, Result};
use crate::eval::{aggregate_folds, compute_recalls, EvalPool, EvalReport, FoldEval, Query};
use crate::losses::LossKind;
use crate::probe::{estimate_queries, train_probe, ProbeParams, TrainConfig, TrainReport};
use crate::report::{emit_markdown, to_json_pretty, LossAblationRow, SweepPoint};
use crate::seeds::{mix, SALT_EXP_TRAIN, SALT_HUMAN_EVAL};
use crate::splits::{
    apply_control_permutation, make_category_splits, make_control_permutation, SplitSpec,
    TestSizes,
};
use crate::synth::{generate_synthetic, SynthSpec};

/// Everything one experiment run depends on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Dataset directory holding manifest and blobs.
    pub dataset: PathBuf,
    /// Output directory for all artifacts of this run.
    pub out_dir: PathBuf,
    pub folds: usize,
    pub n_unseen: usize,
    pub seed: u64,
    /// Retrain against permuted visual targets instead of the true pairing.
    pub control: bool,
    /// Recall cutoffs, ascending.
    pub ks: Vec<usize>,
    pub test_sizes: TestSizes,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::new(),
            out_dir: PathBuf::from("run"),
            folds: 5,
            n_unseen: 10,
            seed: 0,
            control: false,
            ks: vec![1, 5],
            test_sizes: TestSizes::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// The corpus-scale reference protocol: five folds with a 1400/200
    /// category split, 7000-pair seen and 1000-pair unseen test sets, and
    /// batches of 3072 for five epochs.
    pub fn reference_protocol(dataset: PathBuf, out_dir: PathBuf, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            dataset,
            out_dir,
            folds: 5,
            n_unseen: 200,
            seed,
            control: false,
            ks: vec![1, 5],
            test_sizes: TestSizes {
                seen_test: Some(7000),
                unseen_test: Some(1000),
                val: None,
            },
            train: TrainConfig::reference_protocol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::Config("folds must be at least 1".into()));
        }
        if self.ks.is_empty() {
            return Err(Error::Config("k list must be nonempty".into()));
        }
        if self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "k list must be strictly ascending (got {:?})",
                self.ks
            )));
        }
        if self.ks[0] == 0 {
            return Err(Error::Config("k values must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Toml(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// SHA-256 over the canonical TOML serialization with the storage paths
    /// blanked, so the digest identifies the protocol rather than where a
    /// particular run happened to live.
    pub fn digest(&self) -> Result<[u8; 32]> {
        let canonical = ExperimentConfig {
            dataset: PathBuf::new(),
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        let mut hasher = Sha256::new();
        hasher.update(canonical.to_toml_string()?.as_bytes());
        Ok(hasher.finalize().into())
    }
}

/// Files produced for one fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldArtifacts {
    pub fold_index: usize,
    pub split_file: PathBuf,
    pub checkpoint_file: PathBuf,
    pub train_report_file: PathBuf,
}

/// Provenance record tying every artifact of a run to its configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub toolkit_version: String,
    pub created_unix: u64,
    pub control: bool,
    pub folds: Vec<FoldArtifacts>,
    pub report_json: PathBuf,
    pub report_markdown: PathBuf,
}

/// Loads the configured dataset and runs the full protocol.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(RunManifest, EvalReport)> {
    config.validate()?;
    let dataset = load_dataset(&config.dataset)?;
    run_experiment_on(&dataset, config)
}

/// Runs the full protocol on an already loaded dataset: build folds,
/// optionally swap in the control view, train, evaluate seen and unseen test
/// sets with adjective breakdowns, aggregate, and write all artifacts.
pub fn run_experiment_on(
    dataset: &Dataset,
    config: &ExperimentConfig,
) -> Result<(RunManifest, EvalReport)> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    let digest = config.digest()?;

    let splits = make_category_splits(
        dataset,
        config.folds,
        config.n_unseen,
        config.seed,
        config.test_sizes,
    )?;

    // The control view permutes the visual side of the whole dataset; splits
    // are computed on the original so control and treatment pair exactly.
    let control_view;
    let effective: &Dataset = if config.control {
        let permutation = make_control_permutation(&dataset.category_ids(), config.seed)?;
        permutation.save(&config.out_dir.join("control_permutation.json"))?;
        control_view = apply_control_permutation(dataset, &permutation, config.seed)?;
        &control_view
    } else {
        dataset
    };

    let mut artifacts = Vec::with_capacity(splits.len());
    let mut fold_evals = Vec::with_capacity(splits.len());
    for split in &splits {
        let fold = split.fold_index;
        let train_config = TrainConfig {
            seed: mix(config.seed, SALT_EXP_TRAIN, fold as u64),
            ..config.train.clone()
        };
        let (probe, train_report) = train_probe(effective, split, &train_config)?;
        fold_evals.push(evaluate_fold(effective, split, &probe, &config.ks)?);

        let split_file = config.out_dir.join(format!("fold{fold}_split.json"));
        split.save(&split_file)?;
        let checkpoint_file = config.out_dir.join(format!("fold{fold}.xmpc"));
        probe.save_checkpoint(&checkpoint_file, train_config.seed, &digest)?;
        let train_report_file = config.out_dir.join(format!("fold{fold}_train.json"));
        fs::write(&train_report_file, to_json_pretty(&train_report)?)?;
        artifacts.push(FoldArtifacts {
            fold_index: fold,
            split_file,
            checkpoint_file,
            train_report_file,
        });
        // Silence the unused warning while keeping the full report on disk.
        let _: &TrainReport = &train_report;
    }

    let report = aggregate_folds(fold_evals, &config.ks)?;
    let report_json = config.out_dir.join("report.json");
    fs::write(&report_json, to_json_pretty(&report)?)?;
    let report_markdown = config.out_dir.join("report.md");
    fs::write(&report_markdown, emit_markdown(&report))?;

    let manifest = RunManifest {
        config_digest: hex::encode(digest),
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        control: config.control,
        folds: artifacts,
        report_json,
        report_markdown,
    };
    fs::write(
        config.out_dir.join("manifest.json"),
        to_json_pretty(&manifest)?,
    )?;
    Ok((manifest, report))
}

/// Evaluates one trained probe on its fold: seen and unseen test sections
/// plus adjective/no-adjective breakdowns where both subsets are populated.
pub fn evaluate_fold(
    dataset: &Dataset,
    split: &SplitSpec,
    probe: &ProbeParams<f32>,
    ks: &[usize],
) -> Result<FoldEval> {
    let mut sections = BTreeMap::new();
    for (name, ids) in [("seen", &split.seen_test_ids), ("unseen", &split.unseen_test_ids)] {
        if ids.is_empty() {
            continue;
        }
        let pool = EvalPool::from_dataset(dataset, ids)?;
        let queries = estimate_queries(probe, dataset, ids)?;
        sections.insert(name.to_string(), compute_recalls(&queries, &pool, ks)?);

        let (with, without): (Vec<Query>, Vec<Query>) = queries
            .into_iter()
            .partition(|q| has_adjective(dataset, q.record_id));
        if !with.is_empty() && !without.is_empty() {
            sections.insert(
                format!("{name}_adjective"),
                compute_recalls(&with, &pool, ks)?,
            );
            sections.insert(
                format!("{name}_plain"),
                compute_recalls(&without, &pool, ks)?,
            );
        }
    }
    Ok(FoldEval {
        fold_index: split.fold_index,
        sections,
    })
}

fn has_adjective(dataset: &Dataset, record_id: u64) -> bool {
    dataset
        .index_of(record_id)
        .map(|i| dataset.records[i].adjective_count > 0)
        .unwrap_or(false)
}

fn aggregate_mean(report: &EvalReport, key: &str) -> Result<f64> {
    report
        .aggregate
        .get(key)
        .map(|c| c.mean)
        .ok_or_else(|| Error::Config(format!("metric {key} missing from the report")))
}

/// Runs one full experiment per visibility value over synthetic data and
/// returns the unseen-set curve. Requires cutoffs 1 and 5 in the config.
pub fn sweep_context_visibility(
    base: &SynthSpec,
    lambdas: &[f64],
    config: &ExperimentConfig,
) -> Result<Vec<SweepPoint>> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty visibility grid".into()));
    }
    require_curve_ks(config)?;
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let spec = SynthSpec {
            context_visibility: lambda,
            ..base.clone()
        };
        spec.validate()?;
        let dataset = generate_synthetic(&spec)?;
        let sub = ExperimentConfig {
            out_dir: config.out_dir.join(format!("lambda_{lambda:.2}")),
            ..config.clone()
        };
        let (_, report) = run_experiment_on(&dataset, &sub)?;
        points.push(point_from_report(lambda, &report)?);
    }
    Ok(points)
}

/// Sweep over pre-extracted feature files, one per masking rate; each file
/// must carry a `context_visibility` header tag. Points come back sorted by
/// visibility.
pub fn sweep_visibility_files(
    paths: &[PathBuf],
    config: &ExperimentConfig,
) -> Result<Vec<SweepPoint>> {
    if paths.is_empty() {
        return Err(Error::Config("no dataset files to sweep".into()));
    }
    require_curve_ks(config)?;
    let mut points = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let dataset = load_dataset(path)?;
        let lambda = dataset.header.context_visibility.ok_or_else(|| {
            Error::Config(format!(
                "dataset {} carries no context_visibility tag",
                path.display()
            ))
        })?;
        let sub = ExperimentConfig {
            out_dir: config.out_dir.join(format!("point_{i}")),
            ..config.clone()
        };
        let (_, report) = run_experiment_on(&dataset, &sub)?;
        points.push(point_from_report(lambda, &report)?);
    }
    points.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).expect("validated finite"));
    Ok(points)
}

fn require_curve_ks(config: &ExperimentConfig) -> Result<()> {
    if !config.ks.contains(&1) || !config.ks.contains(&5) {
        return Err(Error::Config(format!(
            "visibility sweeps need cutoffs 1 and 5 in the k list (got {:?})",
            config.ks
        )));
    }
    Ok(())
}

fn point_from_report(lambda: f64, report: &EvalReport) -> Result<SweepPoint> {
    Ok(SweepPoint {
        lambda,
        ir_at_1: aggregate_mean(report, "unseen/ir@1")?,
        ir_at_5: aggregate_mean(report, "unseen/ir@5")?,
        cr_at_1: aggregate_mean(report, "unseen/cr@1")?,
    })
}

/// Trains and evaluates every loss on the same dataset and folds; rows come
/// back in the fixed ablation order ending with the contrastive loss.
pub fn run_loss_ablation(
    dataset: &Dataset,
    config: &ExperimentConfig,
) -> Result<Vec<LossAblationRow>> {
    require_curve_ks(config)?;
    let mut rows = Vec::with_capacity(LossKind::ALL.len());
    for kind in LossKind::ALL {
        let sub = ExperimentConfig {
            out_dir: config.out_dir.join(format!("loss_{}", kind.name())),
            train: TrainConfig {
                loss: kind,
                ..config.train.clone()
            },
            ..config.clone()
        };
        let (_, report) = run_experiment_on(dataset, &sub)?;
        let cell = |key: &str| {
            report
                .aggregate
                .get(key)
                .copied()
                .ok_or_else(|| Error::Config(format!("metric {key} missing from the report")))
        };
        rows.push(LossAblationRow {
            loss: kind.name().to_string(),
            ir_at_1: cell("unseen/ir@1")?,
            ir_at_5: cell("unseen/ir@5")?,
            cr_at_1: cell("unseen/cr@1")?,
        });
    }
    Ok(rows)
}

/// Annotator-facing view of one item: metadata plus shuffled candidates,
/// with the answer withheld.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HumanEvalItem {
    pub item_id: usize,
    pub category_id: u64,
    pub image_id: u64,
    pub caption_id: u64,
    pub token_count: usize,
    pub adjective_count: u32,
    /// Candidate record ids in presentation order; exactly one is the true
    /// paired instance.
    pub candidates: Vec<u64>,
}

/// Scoring key for one item.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HumanEvalKey {
    pub item_id: usize,
    pub answer: u64,
    /// The probe's own top-1 pick among this item's candidates.
    pub model_choice: u64,
}

/// A complete annotation bundle: items, key, and the probe's baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HumanEvalBundle {
    pub sample_size: usize,
    pub candidate_count: usize,
    pub seed: u64,
    pub items: Vec<HumanEvalItem>,
    pub key: Vec<HumanEvalKey>,
    /// Fraction of items where the probe's top-1 candidate is the answer.
    pub model_ir1: f64,
}

impl HumanEvalBundle {
    /// Human IR@1 for a filled-in response sheet mapping item id to chosen
    /// record id. Every item must be answered.
    pub fn score(&self, responses: &BTreeMap<usize, u64>) -> Result<f64> {
        let mut correct = 0usize;
        for key in &self.key {
            let choice = responses.get(&key.item_id).ok_or_else(|| {
                Error::Config(format!("item {} has no response", key.item_id))
            })?;
            let item = &self.items[key.item_id];
            if !item.candidates.contains(choice) {
                return Err(Error::Config(format!(
                    "item {}: chosen record {choice} is not among the candidates",
                    key.item_id
                )));
            }
            if choice == &key.answer {
                correct += 1;
            }
        }
        Ok(correct as f64 / self.key.len() as f64)
    }
}

/// Samples unseen-test items and packages them for human annotation.
///
/// Each item pairs one sampled record's metadata with `candidate_count`
/// visual candidates: the true instance plus seeded distractors from the
/// unseen test pool, in shuffled order. The probe's own choice per item is
/// recorded for side-by-side comparison.
pub fn export_human_eval(
    dataset: &Dataset,
    split: &SplitSpec,
    probe: &ProbeParams<f32>,
    sample_size: usize,
    candidate_count: usize,
    seed: u64,
) -> Result<HumanEvalBundle> {
    let pool_ids = &split.unseen_test_ids;
    if sample_size == 0 || sample_size > pool_ids.len() {
        return Err(Error::Config(format!(
            "sample_size must lie in 1..={} (got {sample_size})",
            pool_ids.len()
        )));
    }
    if candidate_count < 2 || candidate_count > pool_ids.len() {
        return Err(Error::Config(format!(
            "candidate_count must lie in 2..={} (got {candidate_count})",
            pool_ids.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, SALT_HUMAN_EVAL, 0));
    let mut sampled = pool_ids.clone();
    sampled.shuffle(&mut rng);
    sampled.truncate(sample_size);

    let mut items = Vec::with_capacity(sample_size);
    let mut key = Vec::with_capacity(sample_size);
    let mut model_hits = 0usize;
    for (item_id, record_id) in sampled.iter().enumerate() {
        let index = dataset.index_of(*record_id)?;
        let record = &dataset.records[index];

        let mut distractors: Vec<u64> = pool_ids.iter().copied().filter(|id| id != record_id).collect();
        let mut item_rng =
            ChaCha8Rng::seed_from_u64(mix(seed, SALT_HUMAN_EVAL, 1 + item_id as u64));
        distractors.shuffle(&mut item_rng);
        let mut candidates: Vec<u64> = distractors[..candidate_count - 1].to_vec();
        candidates.push(*record_id);
        candidates.shuffle(&mut item_rng);

        // The probe's pick among exactly these candidates.
        let candidate_pool = EvalPool::from_dataset(dataset, &candidates)?;
        let queries = estimate_queries(probe, dataset, &[*record_id])?;
        let top = crate::eval::rank_pool(&queries[0].estimate, &candidate_pool, 1)?;
        if top[0] == *record_id {
            model_hits += 1;
        }

        items.push(HumanEvalItem {
            item_id,
            category_id: record.category_id,
            image_id: record.image_id,
            caption_id: record.caption_id,
            token_count: record.token_count,
            adjective_count: record.adjective_count,
            candidates,
        });
        key.push(HumanEvalKey {
            item_id,
            answer: *record_id,
            model_choice: top[0],
        });
    }

    Ok(HumanEvalBundle {
        sample_size,
        candidate_count,
        seed,
        items,
        key,
        model_ir1: model_hits as f64 / sample_size as f64,
    })
}

/// Writes the bundle (with key) and the annotator view (without key).
pub fn write_human_eval_files(bundle: &HumanEvalBundle, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let bundle_path = dir.join("bundle.json");
    fs::write(&bundle_path, to_json_pretty(bundle)?)?;
    let items_path = dir.join("items.json");
    fs::write(&items_path, to_json_pretty(&bundle.items)?)?;
    Ok((bundle_path, items_path))
}
