//! Tooling for GDPR-style compliance pipelines: regulation ingestion, legal
//! clause retrieval, instruction-tuning dataset construction with contrastive
//! counterexamples, retrieval-augmented consultation against served chat
//! models, and a benchmark evaluation harness.
//!
//! The pipeline stages map onto the modules below:
//!
//! - [`ingest`]: parse and normalize source corpora into clauses and cases
//! - [`lexer`]: legal-domain tokenizer (multiword phrases, citation tokens)
//! - [`retriever`]: BM25 inverted index over clauses
//! - [`dataset`]: instruction/answer/output records, contrastive pairs,
//!   balancing and stratified splitting
//! - [`gateway`]: chat-completion client, deterministic stubs, RAG prompts
//! - [`eval`]: benchmark loading, answer/citation extraction, metrics, reports

pub mod citation;
pub mod dataset;
pub mod eval;
pub mod gateway;
pub mod ingest;
pub mod lexer;
pub mod retriever;
pub mod stopwords;
