//! Two-agent visual question answering.
//!
//! A vision-capable translator turns the image into a structured intermediate
//! representation (SIR) using tools; a text-only reasoner reads the SIR and
//! either answers or sends feedback for another round.

mod action;
pub mod backend;
pub mod bench;
pub mod config;
pub mod cost;
pub mod engine;
pub mod fixtures;
pub mod prompts;
pub mod reasoner;
pub mod sir;
pub mod task;
pub mod toolbox;
pub mod trace;
pub mod translator;
