//! Learning-to-forecast market simulation and strategy estimation.
//!
//! Agents (scripted heuristics, chat models, replayed transcripts or people)
//! forecast a price each round; the realized price follows a positive or
//! negative expectation-feedback law. Transcripts of those sessions feed an
//! OLS pipeline that recovers each agent's first-order forecasting rule.

pub mod agents;
pub mod estimation;
pub mod llm;
pub mod market;
pub mod rng;
pub mod session;
pub mod transcript;
