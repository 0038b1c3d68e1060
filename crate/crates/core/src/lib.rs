//! Synthetic reranker training data and IR evaluation toolkit.
//!
//! The crate covers the full loop: persona-grounded query expansion and
//! passage synthesis through an LLM gateway, judge-based label filtering,
//! balanced training-set assembly, BM25 first-stage retrieval, pointwise LLM
//! reranking, rank metrics and a multiple-choice RAG harness. Every model call
//! goes through [`gateway::Gateway`], whose `mock:` endpoints replay a script
//! so each stage can be tested offline.

pub mod bm25;
pub mod corpus;
pub mod dataset;
pub mod gateway;
pub mod judge;
pub mod metrics;
pub mod prompt;
pub mod rag;
pub mod rerank;
pub mod synth;
#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use corpus::{
    Document, LabeledPair, PairSource, Passage, PassageRole, QRels, Query, QueryKind, RankedDoc,
    Ranking,
};
pub use gateway::{ChatExchange, ChatRequest, Gateway, Stage};
