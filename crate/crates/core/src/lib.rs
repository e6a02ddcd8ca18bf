//! Prompt learning over frozen, aligned audio–text embedding spaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensorcore`] – dense `f64` numerics and a reverse-mode tape,
//! * [`embedio`] – embedding datasets, file formats, synthetic generator,
//! * [`encoders`] – frozen toy text encoder, context tokens, meta-network,
//! * [`methods`] – zero-shot, PALM, COOP, COCOOP, linear probe and variants,
//! * [`harness`] – few-shot sampling, cross-validation, result tables,
//! * [`cli`] – the `palmlab` command line.

pub mod embedio;
pub mod rng;
pub mod tensorcore;
pub mod encoders;
pub mod methods;
pub mod harness;
pub mod cli;
