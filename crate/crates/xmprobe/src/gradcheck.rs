//! Central finite-difference verification of analytic gradients.
//!
//! The checker perturbs every parameter entry in turn, re-evaluates the loss,
//! and compares the resulting slope against the analytic gradient that the
//! caller has already populated. All checks run in `f64`; tolerances are far
//! below anything `f32` round-off could satisfy by accident.

use crate::error::{Error, Result};
use crate::tensor::ParamBlock;

/// Step size and acceptance threshold for a finite-difference run.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Perturbation applied on each side of the central difference.
    pub epsilon: f64,
    /// Maximum accepted relative error per entry.
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-4,
        }
    }
}

/// Worst observed deviation within one parameter block.
#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: String,
    pub entries: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst entry, with its analytic and numeric slopes.
    pub worst: Option<(usize, f64, f64)>,
}

/// Outcome of a full gradient check across all parameter blocks.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.failures == 0)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// One line per block, suitable for terminal output.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&format!(
                "{:12} entries {:5}  max rel err {:.3e}  {}\n",
                b.name,
                b.entries,
                b.max_rel_error,
                if b.failures == 0 {
                    "ok".to_string()
                } else {
                    format!("{} FAILED", b.failures)
                }
            ));
        }
        out
    }
}

/// Relative error with an absolute floor, so near-zero slopes compare sanely.
///
/// The floor makes the check on tiny gradients an absolute one at
/// `tolerance * 1e-6`. A central difference with the default step carries
/// round-off and truncation noise of roughly `1e-11` on a unit-scale loss,
/// so a smaller floor would flag honest near-zero entries on noise alone.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Checks the analytic gradients stored in a model's parameter blocks.
///
/// `params` hands out mutable references to every block of `model` in a
/// stable order; `eval` computes the scalar loss from the current parameter
/// values without touching the stored gradients. The caller must have run its
/// backward pass first so the analytic gradients are in place.
pub fn check_gradients<M>(
    model: &mut M,
    mut params: impl FnMut(&mut M) -> Vec<&mut ParamBlock<f64>>,
    mut eval: impl FnMut(&mut M) -> Result<f64>,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if config.epsilon <= 0.0 || config.tolerance <= 0.0 {
        return Err(Error::Config(
            "gradient check needs positive epsilon and tolerance".into(),
        ));
    }
    let analytic: Vec<(String, Vec<f64>)> = params(model)
        .iter()
        .map(|b| (b.name.clone(), b.grad.as_slice().to_vec()))
        .collect();

    let mut blocks = Vec::with_capacity(analytic.len());
    for (k, (name, grads)) in analytic.iter().enumerate() {
        let mut report = BlockReport {
            name: name.clone(),
            entries: grads.len(),
            failures: 0,
            max_rel_error: 0.0,
            worst: None,
        };
        for i in 0..grads.len() {
            let orig = params(model)[k].value.as_slice()[i];

            params(model)[k].value.as_mut_slice()[i] = orig + config.epsilon;
            let up = eval(model)?;
            params(model)[k].value.as_mut_slice()[i] = orig - config.epsilon;
            let down = eval(model)?;
            params(model)[k].value.as_mut_slice()[i] = orig;

            let numeric = (up - down) / (2.0 * config.epsilon);
            let rel = relative_error(grads[i], numeric);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((i, grads[i], numeric));
            }
            if rel > config.tolerance {
                report.failures += 1;
            }
        }
        blocks.push(report);
    }
    Ok(GradCheckReport {
        blocks,
        tolerance: config.tolerance,
    })
}
