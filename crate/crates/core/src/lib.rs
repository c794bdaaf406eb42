//! Core library for turning videos into text stories and scoring how well
//! those stories support downstream understanding tasks.
//!
//! The pipeline: sample keyframes from a video, extract textual signals
//! (frame captions, on-screen text, transcript, brand metadata), assemble a
//! story prompt, generate the story through a pluggable LLM backend, then
//! run classification/retrieval/generation tasks against the story and
//! evaluate them.

pub mod config;
pub mod corpus;
pub mod gateway;
pub mod media;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prompt;
pub mod signals;
pub mod store;
pub mod synth;
pub mod tasks;
