//! Knowledge-graph driven hallucination benchmark.
//!
//! The crate generates compound questions about randomly sampled
//! knowledge-graph entities, estimates each question's difficulty, verifies
//! long-form model answers with an entity-level similarity filter followed
//! by a fact-level NLI → LLM → expert pipeline, and aggregates the results
//! into accuracy, weighted accuracy and breadth/depth hallucination rates.

pub mod backends;
pub mod client;
pub mod difficulty;
pub mod harness;
pub mod kg;
pub mod metrics;
pub mod question;
pub mod seed;
pub mod synthetic;
pub mod tables;
pub mod transport;
pub mod verification;
