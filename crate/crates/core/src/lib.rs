//! Retrieval-augmented carbon footprint accounting.
//!
//! The pipeline ingests datasources ([`corpus`]), embeds and indexes their
//! chunks ([`embedding`], [`index`]), picks a datasource strategy and builds
//! an enhanced prompt ([`fusion`]), obtains and parses a structured answer
//! ([`generation`]), turns the extracted inventory into a footprint
//! ([`accounting`]) and scores everything against ground truth
//! ([`evaluation`]).

pub mod accounting;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod estimate;
pub mod evaluation;
pub mod fusion;
pub mod generation;
pub mod http;
pub mod index;
pub mod pipeline;

pub use estimate::Estimate;
