//! Metadata-driven extraction of structured ESG disclosures from corporate
//! reports.
//!
//! The pipeline runs in three stages. A [`metadata`] registry describes the
//! indicators of a reporting standard. Reports are ingested into the
//! [`docmodel`] and indexed into a multi-type knowledge base ([`kb`]).
//! For every indicator the [`agent`] retrieves evidence ([`retrieval`]),
//! prompts a chat model and parses its reply into validated records.
//! [`eval`] scores records against annotations and runs ablations;
//! [`analytics`] aggregates them into disclosure, intensity and key-action
//! statistics.

pub mod agent;
pub mod analytics;
pub mod docmodel;
pub mod eval;
pub mod fsutil;
pub mod kb;
pub mod metadata;
pub mod provider;
pub mod retrieval;
pub mod synthetic;
pub mod text;
pub mod value;
