//! The probing model and its training loop.
//!
//! The probe consumes a variable-length sequence of language vectors with a
//! single-layer unidirectional LSTM, takes the final hidden state, and
//! projects it linearly into the visual space. It is the only trained
//! component; input features are frozen data and receive no gradients.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adam::{AdamConfig, AdamState};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{compute_recalls, EvalPool, Query};
use crate::losses::{batch_loss, LossKind};
use crate::lstm::{LstmCell, StepCache};
use crate::seeds::{mix, SALT_TRAIN};
use crate::splits::SplitSpec;
use crate::tensor::{ParamBlock, Scalar, Tensor2D};

/// Checkpoint magic bytes.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XMPC";
/// Only supported checkpoint version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// All trainable parameters of the probe.
#[derive(Debug, Clone)]
pub struct ProbeParams<F> {
    pub cell: LstmCell<F>,
    /// Output projection, `H x d_V`; the estimate is `w_out' h_last + b_out`.
    pub w_out: ParamBlock<F>,
    /// Output bias, `1 x d_V`.
    pub b_out: ParamBlock<F>,
}

/// Per-step activations of one forward pass, for backpropagation through time.
#[derive(Debug, Clone)]
pub struct SequenceCache<F> {
    pub steps: Vec<StepCache<F>>,
    pub h_last: Vec<F>,
}

impl<F: Scalar> ProbeParams<F> {
    /// Seeded initialization: recurrent weights and the projection uniform in
    /// `(-1/sqrt(H), 1/sqrt(H))`, forget-gate bias 1, all other biases 0.
    pub fn init(d_l: usize, hidden: usize, d_v: usize, seed: u64) -> Result<Self> {
        if d_l == 0 || hidden == 0 || d_v == 0 {
            return Err(Error::Config(format!(
                "probe dimensions must be positive (d_L={d_l}, H={hidden}, d_V={d_v})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = LstmCell::init(d_l, hidden, &mut rng);
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_out = Tensor2D::uniform(hidden, d_v, -bound, bound, &mut rng);
        Ok(ProbeParams {
            cell,
            w_out: ParamBlock::new("proj.w_out", w_out),
            b_out: ParamBlock::new("proj.b_out", Tensor2D::zeros(1, d_v)),
        })
    }

    /// All-zero parameters; useful for degenerate-case tests.
    pub fn zeros(d_l: usize, hidden: usize, d_v: usize) -> Self {
        ProbeParams {
            cell: LstmCell::zeros(d_l, hidden),
            w_out: ParamBlock::new("proj.w_out", Tensor2D::zeros(hidden, d_v)),
            b_out: ParamBlock::new("proj.b_out", Tensor2D::zeros(1, d_v)),
        }
    }

    pub fn d_l(&self) -> usize {
        self.cell.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden_dim
    }

    pub fn d_v(&self) -> usize {
        self.w_out.value.cols()
    }

    /// Parameter blocks in the documented fixed order. Optimizer state and
    /// checkpoints both rely on this order.
    pub fn blocks(&self) -> Vec<&ParamBlock<F>> {
        vec![&self.cell.w_ih, &self.cell.w_hh, &self.cell.bias, &self.w_out, &self.b_out]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock<F>> {
        vec![
            &mut self.cell.w_ih,
            &mut self.cell.w_hh,
            &mut self.cell.bias,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn zero_grads(&mut self) {
        for block in self.blocks_mut() {
            block.zero_grad();
        }
    }

    /// Runs the sequence left to right and projects the final hidden state.
    pub fn forward(&self, tokens: &Tensor2D<F>) -> Result<Vec<F>> {
        Ok(self.forward_cached(tokens)?.0)
    }

    /// Forward pass that also returns what the backward pass needs.
    pub fn forward_cached(&self, tokens: &Tensor2D<F>) -> Result<(Vec<F>, SequenceCache<F>)> {
        if tokens.rows() == 0 {
            return Err(Error::Usage("cannot run the probe on an empty sequence".into()));
        }
        if tokens.cols() != self.d_l() {
            return Err(Error::shape(
                "probe forward: token width",
                self.d_l().to_string(),
                tokens.cols().to_string(),
            ));
        }
        let hd = self.hidden();
        let mut h = vec![F::zero(); hd];
        let mut c = vec![F::zero(); hd];
        let mut steps = Vec::with_capacity(tokens.rows());
        for t in 0..tokens.rows() {
            let (h_next, cache) = self.cell.step_cached(tokens.row(t), &h, &c)?;
            c = cache.c_next.clone();
            h = h_next;
            steps.push(cache);
        }
        let mut estimate = self.w_out.value.matvec_t(&h);
        for (e, b) in estimate.iter_mut().zip(self.b_out.value.row(0)) {
            *e = *e + *b;
        }
        Ok((estimate, SequenceCache { steps, h_last: h }))
    }

    /// Accumulates parameter gradients for one sequence given the gradient of
    /// the loss w.r.t. the estimate. Call [`ProbeParams::zero_grads`] first
    /// when starting a new batch.
    pub fn backward(&mut self, cache: &SequenceCache<F>, d_estimate: &[F]) -> Result<()> {
        if d_estimate.len() != self.d_v() {
            return Err(Error::shape(
                "probe backward: estimate gradient",
                self.d_v().to_string(),
                d_estimate.len().to_string(),
            ));
        }
        self.w_out.grad.add_outer(&cache.h_last, d_estimate);
        for (b, d) in self.b_out.grad.row_mut(0).iter_mut().zip(d_estimate) {
            *b = *b + *d;
        }
        let mut dh = self.w_out.value.matvec(d_estimate);
        let mut dc = vec![F::zero(); self.hidden()];
        for cache_t in cache.steps.iter().rev() {
            let (dh_prev, dc_prev) = self.cell.backward_step(cache_t, &dh, &dc);
            dh = dh_prev;
            dc = dc_prev;
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ProbeParams<T> {
        ProbeParams {
            cell: self.cell.cast(),
            w_out: self.w_out.cast(),
            b_out: self.b_out.cast(),
        }
    }

    /// SHA-256 over the packed little-endian `f32` parameter bytes, block by
    /// block in the fixed order. Stable across precisions up to `f32` casts.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for block in self.blocks() {
            for v in block.value.as_slice() {
                hasher.update((v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Writes the checkpoint: header (magic, version, dims, seed, config
    /// digest), then the parameter blocks as packed little-endian `f32`.
    pub fn save_checkpoint(&self, path: &std::path::Path, seed: u64, config_digest: &[u8; 32]) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.d_l() as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.hidden() as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.d_v() as u32).to_le_bytes());
        bytes.extend_from_slice(&seed.to_le_bytes());
        bytes.extend_from_slice(config_digest);
        for block in self.blocks() {
            for v in block.value.as_slice() {
                bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// Reads a checkpoint back into `f32` parameters plus its seed and config
/// digest.
pub fn load_checkpoint(path: &std::path::Path) -> Result<(ProbeParams<f32>, u64, [u8; 32])> {
    let bytes = std::fs::read(path)?;
    let header_len = 4 + 4 + 4 + 4 + 4 + 8 + 32;
    if bytes.len() < header_len {
        return Err(Error::Format(format!(
            "checkpoint {} too short for its header",
            path.display()
        )));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic in {}",
            path.display()
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("bounds checked"));
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let d_l = u32_at(8) as usize;
    let hidden = u32_at(12) as usize;
    let d_v = u32_at(16) as usize;
    let seed = u64::from_le_bytes(bytes[20..28].try_into().expect("bounds checked"));
    let mut digest = [0u8; 32];
    digest.copy_from_slice(&bytes[28..60]);

    let counts = [4 * hidden * d_l, 4 * hidden * hidden, 4 * hidden, hidden * d_v, d_v];
    let total: usize = counts.iter().sum();
    if bytes.len() != header_len + total * 4 {
        return Err(Error::Truncated {
            path: path.display().to_string(),
            expected: (header_len + total * 4) as u64,
            found: bytes.len() as u64,
        });
    }
    let mut floats = bytes[header_len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut take = |n: usize| -> Vec<f32> { floats.by_ref().take(n).collect() };

    let mut probe = ProbeParams::<f32>::zeros(d_l, hidden, d_v);
    let shapes = [
        (4 * hidden, d_l),
        (4 * hidden, hidden),
        (1, 4 * hidden),
        (hidden, d_v),
        (d_v, 0),
    ];
    for (slot, block) in probe.blocks_mut().into_iter().enumerate() {
        let data = take(counts[slot]);
        let (rows, cols) = shapes[slot];
        let (rows, cols) = if cols == 0 { (1, rows) } else { (rows, cols) };
        block.value = Tensor2D::from_vec(rows, cols, data)?;
        block.zero_grad();
    }
    Ok((probe, seed, digest))
}

/// Numeric width used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Usage(format!(
                "unknown precision '{other}' (expected f32 or f64)"
            ))),
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub hidden: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            epochs: 5,
            lr: 5e-4,
            weight_decay: 5e-4,
            loss: LossKind::InfoNce,
            seed: 0,
            hidden: 256,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    /// The corpus-scale reference protocol: batches of 3072 for 5 epochs at
    /// the default learning rate and weight decay.
    pub fn reference_protocol() -> Self {
        TrainConfig {
            batch_size: 3072,
            ..TrainConfig::default()
        }
    }

    /// SHA-256 over the canonical serialization; stamped into checkpoints
    /// written outside a full experiment run.
    pub fn digest(&self) -> Result<[u8; 32]> {
        let text = serde_json::to_string(self).map_err(Error::from)?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        Ok(hasher.finalize().into())
    }
}

/// Per-run training trace and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per epoch; length equals the configured epoch count.
    pub epoch_mean_loss: Vec<f64>,
    /// Validation IR@1 per epoch; empty when the fold has no validation set.
    pub val_ir1: Vec<f64>,
    /// Loss of the very first batch, before any update.
    pub initial_loss: f64,
    /// Size-1 tail batches skipped because a contrastive loss has no
    /// distractors there.
    pub dropped_short_batches: usize,
    /// Wall-clock seconds; excluded from serialization so identical runs
    /// produce identical report bytes.
    #[serde(skip)]
    pub wall_clock_secs: f64,
    /// SHA-256 of the final parameters.
    pub params_sha256: String,
}

/// Trains a probe on one fold's training records.
///
/// Shuffles records each epoch with a seeded stream, forms mini-batches,
/// and applies the configured loss and optimizer. The dataset is never
/// mutated; the trained parameters come back in `f32` regardless of the
/// training precision.
pub fn train_probe(
    dataset: &Dataset,
    split: &SplitSpec,
    config: &TrainConfig,
) -> Result<(ProbeParams<f32>, TrainReport)> {
    match config.precision {
        Precision::F32 => train_impl::<f32>(dataset, split, config),
        Precision::F64 => {
            let (probe, report) = train_impl::<f64>(dataset, split, config)?;
            let probe32 = probe.cast::<f32>();
            let report = TrainReport {
                params_sha256: probe32.checksum(),
                ..report
            };
            Ok((probe32, report))
        }
    }
}

fn train_impl<F: Scalar>(
    dataset: &Dataset,
    split: &SplitSpec,
    config: &TrainConfig,
) -> Result<(ProbeParams<F>, TrainReport)> {
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if config.loss.needs_distractors() && config.batch_size < 2 {
        return Err(Error::Config(format!(
            "{} needs batches of at least 2 (got batch_size {})",
            config.loss.name(),
            config.batch_size
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if split.train_ids.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }

    let started = Instant::now();
    let d_l = dataset.header.d_l;
    let d_v = dataset.header.d_v;
    let mut probe = ProbeParams::<F>::init(d_l, config.hidden, d_v, mix(config.seed, SALT_TRAIN, 1))?;
    let adam_config = AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(&probe.blocks(), adam_config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, SALT_TRAIN, 0));

    let val_pool = if split.val_ids.is_empty() {
        None
    } else {
        Some(EvalPool::from_dataset(dataset, &split.val_ids)?)
    };

    let mut ids = split.train_ids.clone();
    let mut epoch_mean_loss = Vec::with_capacity(config.epochs);
    let mut val_ir1 = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut dropped_short_batches = 0usize;

    for _epoch in 0..config.epochs {
        ids.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for (batch_index, batch) in ids.chunks(config.batch_size).enumerate() {
            if batch.len() < 2 && config.loss.needs_distractors() {
                dropped_short_batches += 1;
                continue;
            }
            let mut estimates = Tensor2D::zeros(batch.len(), d_v);
            let mut targets = Tensor2D::zeros(batch.len(), d_v);
            let mut caches = Vec::with_capacity(batch.len());
            for (row, id) in batch.iter().enumerate() {
                let index = dataset.index_of(*id)?;
                let tokens = dataset.lang_tensor::<F>(index);
                let (estimate, cache) = probe.forward_cached(&tokens)?;
                estimates.row_mut(row).copy_from_slice(&estimate);
                targets
                    .row_mut(row)
                    .copy_from_slice(&dataset.vis_vector::<F>(index));
                caches.push(cache);
            }
            let (loss, d_estimates) = batch_loss(config.loss, &estimates, &targets)?;
            let loss64 = loss.to_f64_lossy();
            if !loss64.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss64} at batch {batch_index} of epoch {_epoch}; aborting"
                )));
            }
            if initial_loss.is_nan() {
                initial_loss = loss64;
            }
            probe.zero_grads();
            for (row, cache) in caches.iter().enumerate() {
                probe.backward(cache, d_estimates.row(row))?;
            }
            adam.step(&mut probe.blocks_mut())?;
            loss_sum += loss64;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Config(format!(
                "no usable batches: {} training records with batch_size {} under {}",
                ids.len(),
                config.batch_size,
                config.loss.name()
            )));
        }
        epoch_mean_loss.push(loss_sum / batches as f64);

        if let Some(pool) = &val_pool {
            let queries = estimate_queries(&probe, dataset, &split.val_ids)?;
            let recalls = compute_recalls(&queries, pool, &[1])?;
            val_ir1.push(recalls[0].ir);
        }
    }

    let report = TrainReport {
        epoch_mean_loss,
        val_ir1,
        initial_loss,
        dropped_short_batches,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        params_sha256: probe.checksum(),
    };
    Ok((probe, report))
}

/// Maps records to evaluation queries by running the probe forward. The
/// estimates are widened to `f64` for the retrieval stage.
pub fn estimate_queries<F: Scalar>(
    probe: &ProbeParams<F>,
    dataset: &Dataset,
    ids: &[u64],
) -> Result<Vec<Query>> {
    let mut queries = Vec::with_capacity(ids.len());
    for id in ids {
        let index = dataset.index_of(*id)?;
        let tokens = dataset.lang_tensor::<F>(index);
        let estimate = probe.forward(&tokens)?;
        queries.push(Query {
            record_id: *id,
            category_id: dataset.records[index].category_id,
            estimate: estimate.iter().map(|v| v.to_f64_lossy()).collect(),
        });
    }
    Ok(queries)
}
