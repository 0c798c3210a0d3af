//! Compiles the guide's code listings as doc-tests so the book cannot
//! drift from the library. Each chapter is attached to a hidden module.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/data-model.md")]
mod data_model {}

#[doc = include_str!("../../../book/src/probe.md")]
mod probe {}

#[doc = include_str!("../../../book/src/losses.md")]
mod losses {}

#[doc = include_str!("../../../book/src/training.md")]
mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}

#[doc = include_str!("../../../book/src/splits-and-controls.md")]
mod splits_and_controls {}

#[doc = include_str!("../../../book/src/synthetic-data.md")]
mod synthetic_data {}

#[doc = include_str!("../../../book/src/experiments.md")]
mod experiments {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
