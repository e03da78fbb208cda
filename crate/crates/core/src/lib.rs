//! Arrhythmia classification from 12-lead ECG records.
//!
//! The pipeline runs record ingestion (or synthesis), median-filter
//! preprocessing, per-second Morlet scalograms for every lead, row-wise
//! stacking of the 12 lead scalograms into one colour image, and a small
//! from-scratch neural network engine used to train and evaluate five
//! classifier topologies.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Every
//! parallel loop writes disjoint outputs or reduces in a fixed order, so
//! results do not depend on the thread count.

pub mod architectures;
pub mod commands;
pub mod config;
pub mod error;
pub mod nn;
pub mod par;
pub mod preprocess;
pub mod signal_io;
pub mod tfr;
pub mod train_eval;

pub use error::{Error, Result};
pub use signal_io::{ArrhythmiaClass, EcgRecord};
