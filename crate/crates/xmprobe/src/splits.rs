//! Seen/unseen category folds and the control-task permutation.
//!
//! A fold hides a random subset of categories from training entirely; records
//! of those categories form the unseen test set. Training never sees an
//! image or caption that appears in any test or validation set of its fold.
//! The control permutation is a derangement over category ids used to retrain
//! the probe against systematically wrong visual targets.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seeds::{mix, SALT_CONTROL_APPLY, SALT_CONTROL_PERM, SALT_SPLIT_FOLD};

/// Record-set sizing for one fold. `None` fields fall back to defaults:
/// all unseen-category records for `unseen_test`, a tenth of the seen
/// records for `seen_test`, and the seen-test size for `val`.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct TestSizes {
    pub seen_test: Option<usize>,
    pub unseen_test: Option<usize>,
    pub val: Option<usize>,
}

/// One fold's category partition and record assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fold_index: usize,
    pub seed: u64,
    pub seen_categories: Vec<u64>,
    pub unseen_categories: Vec<u64>,
    pub train_ids: Vec<u64>,
    pub val_ids: Vec<u64>,
    pub seen_test_ids: Vec<u64>,
    pub unseen_test_ids: Vec<u64>,
    /// Seen-category records dropped from training because they share an
    /// image or caption with a test or validation record.
    pub excluded_ids: Vec<u64>,
}

impl SplitSpec {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SplitSpec> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Fixed-point-free category permutation for the control task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlPermutation {
    pub seed: u64,
    pub mapping: BTreeMap<u64, u64>,
}

impl ControlPermutation {
    pub fn map(&self, category_id: u64) -> Result<u64> {
        self.mapping.get(&category_id).copied().ok_or_else(|| {
            Error::Config(format!("category {category_id} not covered by the control permutation"))
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ControlPermutation> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Builds `n_folds` independent seen/unseen splits.
///
/// Each fold draws its own category shuffle from `(seed, fold_index)`, takes
/// `n_unseen` categories as unseen, then partitions the seen-category records
/// into test, validation, and training. Any seen record sharing an image or
/// caption with a test or validation record is excluded from training.
pub fn make_category_splits(
    dataset: &Dataset,
    n_folds: usize,
    n_unseen: usize,
    seed: u64,
    sizes: TestSizes,
) -> Result<Vec<SplitSpec>> {
    let categories = dataset.category_ids();
    if n_folds == 0 {
        return Err(Error::Config("need at least one fold".into()));
    }
    if n_unseen == 0 || n_unseen >= categories.len() {
        return Err(Error::Config(format!(
            "n_unseen must lie in 1..{} (got {n_unseen})",
            categories.len()
        )));
    }

    let mut folds = Vec::with_capacity(n_folds);
    for fold_index in 0..n_folds {
        let fold_seed = mix(seed, SALT_SPLIT_FOLD, fold_index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(fold_seed);

        let mut shuffled = categories.clone();
        shuffled.shuffle(&mut rng);
        let unseen: BTreeSet<u64> = shuffled[..n_unseen].iter().copied().collect();
        let seen: BTreeSet<u64> = shuffled[n_unseen..].iter().copied().collect();

        let mut unseen_records: Vec<&crate::dataset::PairRecord> = dataset
            .records
            .iter()
            .filter(|r| unseen.contains(&r.category_id))
            .collect();
        let mut seen_records: Vec<&crate::dataset::PairRecord> = dataset
            .records
            .iter()
            .filter(|r| seen.contains(&r.category_id))
            .collect();
        unseen_records.shuffle(&mut rng);
        seen_records.shuffle(&mut rng);

        let unseen_test_size = sizes.unseen_test.unwrap_or(unseen_records.len());
        if unseen_test_size > unseen_records.len() {
            return Err(Error::Config(format!(
                "fold {fold_index}: requested {unseen_test_size} unseen test records but only {} exist",
                unseen_records.len()
            )));
        }
        let seen_test_size = sizes.seen_test.unwrap_or((seen_records.len() / 10).max(1));
        let val_size = sizes.val.unwrap_or(seen_test_size);
        if seen_test_size + val_size >= seen_records.len() {
            return Err(Error::Config(format!(
                "fold {fold_index}: seen test ({seen_test_size}) + validation ({val_size}) \
                 leave no training records out of {}",
                seen_records.len()
            )));
        }

        let mut unseen_test_ids: Vec<u64> = unseen_records[..unseen_test_size]
            .iter()
            .map(|r| r.record_id)
            .collect();

        // Held-out records reserve their images and captions; later records
        // touching either may not train.
        let mut held_images: HashSet<u64> = HashSet::new();
        let mut held_captions: HashSet<u64> = HashSet::new();
        let mut seen_test_ids = Vec::with_capacity(seen_test_size);
        let mut val_ids = Vec::with_capacity(val_size);
        let mut train_ids = Vec::new();
        let mut excluded_ids = Vec::new();
        for rec in &seen_records {
            if seen_test_ids.len() < seen_test_size {
                seen_test_ids.push(rec.record_id);
                held_images.insert(rec.image_id);
                held_captions.insert(rec.caption_id);
            } else if val_ids.len() < val_size {
                val_ids.push(rec.record_id);
                held_images.insert(rec.image_id);
                held_captions.insert(rec.caption_id);
            } else if held_images.contains(&rec.image_id) || held_captions.contains(&rec.caption_id)
            {
                excluded_ids.push(rec.record_id);
            } else {
                train_ids.push(rec.record_id);
            }
        }
        if train_ids.is_empty() {
            return Err(Error::Config(format!(
                "fold {fold_index}: no training records remain ({} excluded for image/caption overlap)",
                excluded_ids.len()
            )));
        }

        unseen_test_ids.sort_unstable();
        seen_test_ids.sort_unstable();
        val_ids.sort_unstable();
        train_ids.sort_unstable();
        excluded_ids.sort_unstable();
        folds.push(SplitSpec {
            fold_index,
            seed: fold_seed,
            seen_categories: seen.into_iter().collect(),
            unseen_categories: unseen.into_iter().collect(),
            train_ids,
            val_ids,
            seen_test_ids,
            unseen_test_ids,
            excluded_ids,
        });
    }
    Ok(folds)
}

/// Draws a uniformly seeded derangement over the given categories.
///
/// Rejection-samples shuffles until none maps to itself; for two categories
/// the only derangement is the swap.
pub fn make_control_permutation(category_ids: &[u64], seed: u64) -> Result<ControlPermutation> {
    let unique: BTreeSet<u64> = category_ids.iter().copied().collect();
    if unique.len() < 2 {
        return Err(Error::Config(format!(
            "a control permutation needs at least 2 categories (got {})",
            unique.len()
        )));
    }
    let sources: Vec<u64> = unique.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, SALT_CONTROL_PERM, 0));
    let mut targets = sources.clone();
    loop {
        targets.shuffle(&mut rng);
        if sources.iter().zip(&targets).all(|(a, b)| a != b) {
            break;
        }
    }
    let mapping = sources.into_iter().zip(targets).collect();
    Ok(ControlPermutation { seed, mapping })
}

/// Builds the control view: every record keeps its language side but takes
/// the visual vector of a seeded-random record from category `f(o)`.
pub fn apply_control_permutation(
    dataset: &Dataset,
    permutation: &ControlPermutation,
    seed: u64,
) -> Result<Dataset> {
    let mut by_category: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, rec) in dataset.records.iter().enumerate() {
        by_category.entry(rec.category_id).or_default().push(i);
    }

    let mut vis = dataset.vis_blob.clone();
    let d_v = dataset.header.d_v;
    for (i, rec) in dataset.records.iter().enumerate() {
        let target_cat = permutation.map(rec.category_id)?;
        let candidates = by_category.get(&target_cat).ok_or_else(|| Error::Data {
            record_id: rec.record_id,
            message: format!(
                "control target category {target_cat} (from {}) has no records",
                rec.category_id
            ),
        })?;
        // Per-record stream keyed by record_id, so the view is reproducible
        // independent of iteration order.
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, SALT_CONTROL_APPLY, rec.record_id));
        let source = candidates[rng.random_range(0..candidates.len())];
        vis[i * d_v..(i + 1) * d_v].copy_from_slice(dataset.vis(source));
    }
    dataset.with_visual_rows(vis)
}
