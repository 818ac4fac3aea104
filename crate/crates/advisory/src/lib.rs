//! Grounded advisory narratives: the clinician prompt built from a risk
//! assessment, an HTTP chat-completion client, a grounding validator and
//! a deterministic offline fallback.

mod client;
mod fallback;
mod narrative;
mod prompt;
mod validate;

pub use client::{advise, request_advice, AdviceOutcome, Advisor, ClientConfig, DEFAULT_CONCURRENCY, DEFAULT_TIMEOUT_SECS};
pub use fallback::{channel_means, fallback_template, FALLBACK_MODEL};
pub use narrative::{parse_sections, Narrative, Section, Sections, Source};
pub use prompt::{build_prompt, format_percent, PromptPair, DEFAULT_TOP_K, MORTALITY_TASK, PRETERM_TASK, SYSTEM_PROMPT};
pub use validate::{validate_narrative, ValidationReport, Violation};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdvisoryError {
    #[error("advisory client is offline")]
    Offline,
    #[error("request timed out after {0} s")]
    Timeout(u64),
    #[error("network: {0}")]
    Network(String),
    #[error("upstream returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unparseable reply: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

impl From<aicare_core::model::ModelError> for AdvisoryError {
    fn from(e: aicare_core::model::ModelError) -> Self {
        AdvisoryError::Invalid(e.to_string())
    }
}
