//! Knowledge-graph random-walk context building for multiple-choice QA.
//!
//! Pipeline: ingest a ConceptNet dump ([`graph`]), verbalize triples
//! ([`verbalize`]), retrieve by exact cosine search ([`embed`]), build
//! directed walk chains around an anchor concept ([`walker`]), assemble
//! prompts ([`prompt`]), query a generation backend ([`llm`]) and score the
//! answers ([`eval`]). [`experiment`] runs one configured table cell end to
//! end.

pub mod embed;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod llm;
pub mod prompt;
pub mod verbalize;
pub mod walker;
