//! Network intrusion detection by prompting a chat model.
//!
//! The pipeline: load a feature [`catalog`], let the model pick the features
//! it finds informative ([`selection`]), describe flows as prose and wrap them
//! in an in-context learning prompt ([`prompting`]), parse yes/no answers
//! ([`detection`]), and score the result against ground truth ([`eval`]).
//! Backends live in [`llm_client`].

pub mod catalog;
pub mod detection;
pub mod eval;
pub mod llm_client;
pub mod prompting;
pub mod selection;
