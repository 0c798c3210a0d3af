//! A toolkit for probing how well language representations of concrete nouns
//! predict their visual counterparts.
//!
//! The pipeline works on pre-extracted feature pairs: a variable-length
//! sequence of language vectors on one side, a fixed-width visual vector on
//! the other, one pair per object mention. A small recurrent probe is trained
//! to map the language side into the visual space with a contrastive
//! objective, and the quality of the mapping is measured by instance- and
//! category-level retrieval recall over held-out pools, under seen/unseen
//! category splits, permutation controls, and loss/context ablations.
//!
//! The main entry points are:
//!
//! - [`dataset`]: the on-disk container for paired features and its validation
//! - [`synth`]: a seeded generator of synthetic paired datasets with planted
//!   category and context structure
//! - [`probe`]: the recurrent probe and its training loop
//! - [`losses`]: the four training objectives with analytic gradients
//! - [`eval`]: ranking, recall metrics, fold aggregation, random baselines
//! - [`splits`]: seen/unseen category folds and the control permutation
//! - [`experiment`]: the full multi-fold protocol, sweeps, and exports
//!
//! ```
//! use xmprobe::synth::{generate_synthetic, SynthSpec};
//! use xmprobe::dataset::validate_dataset;
//!
//! let spec = SynthSpec {
//!     n_categories: 4,
//!     instances_per_category: 3,
//!     ..SynthSpec::default()
//! };
//! let ds = generate_synthetic(&spec).unwrap();
//! assert_eq!(ds.records.len(), 12);
//! assert!(validate_dataset(&ds).is_clean());
//! ```

pub mod adam;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod lstm;
pub mod probe;
pub mod report;
pub mod splits;
pub mod synth;
pub mod tensor;

mod seeds;

pub use error::{Error, Result};
pub use tensor::{ParamBlock, Scalar, Tensor2D};
