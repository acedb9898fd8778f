//! Desk-scale caption learning: a linear-softmax captioning policy taught
//! to paraphrase under a semantic-preserving gate, then refined with
//! self-critical reward optimization, evaluated by fluency, fidelity and
//! adequacy metrics on synthetic caption worlds.

pub mod ablate;
pub mod data;
pub mod embeddings;
pub mod information;
pub mod io;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod rewards;
pub mod text;
pub mod train;
pub mod world;
