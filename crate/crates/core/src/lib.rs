//! Persona-augmented, strategy-controlled emotional-support dialogue
//! generation.
//!
//! The crate is organised bottom-up:
//!
//! * [`corpus`] loads, validates, splits and synthesises conversations.
//! * [`persona`] extracts seeker persona facts and annotates corpora.
//! * [`model`] holds the shared encoder, persona fusion and decoder.
//! * [`train`] fits a model on annotated examples.
//! * [`decode`] turns a trained model into strategy-conditioned responses.
//! * [`metrics`] scores generations and runs the persona correlation study.
//! * [`service`] exposes multi-turn chat sessions over HTTP.

pub mod config;
pub mod corpus;
pub mod dataset;
pub mod decode;
pub mod error;
mod hash;
pub mod metrics;
pub mod model;
pub mod persona;
pub mod service;
pub mod strategy;
pub mod train;

pub use error::{Error, Result};
pub use strategy::Strategy;
