//! Deterministic federated-learning simulator.
//!
//! A round trips through: local training on private shards, optional
//! adversarial corruption of the uploads, server-side aggregation under one
//! of several rules, and redistribution of the aggregate. The headline
//! aggregator keeps a reputation per participant (an EMA of the cosine
//! similarity between each upload and the aggregate), weighs contributions by
//! it, prunes participants whose reputation collapses, and rations how much
//! of the aggregate each participant may download.
//!
//! Everything is seeded and single-threaded by default; identical inputs
//! produce bit-identical outputs, including the emitted CSV.

pub mod adversary;
pub mod aggregator;
pub mod config;
pub mod data;
#[cfg(doctest)]
pub mod guide;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod orchestrator;
pub mod runner;
pub mod seeds;
pub mod suite;
