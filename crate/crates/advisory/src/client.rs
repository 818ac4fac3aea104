use std::sync::Arc;
use std::time::Duration;

use aicare_core::data::{FeatureSchema, Preprocessor};
use aicare_core::model::RiskAssessment;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::fallback::fallback_template;
use crate::narrative::{parse_sections, Narrative, Source};
use crate::prompt::{build_prompt, PromptPair};
use crate::validate::{validate_narrative, ValidationReport};
use crate::AdvisoryError;

pub const DEFAULT_TIMEOUT_SECS: u64 = 30;
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientConfig {
    /// Chat-completion endpoint; `None` means offline.
    pub url: Option<String>,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub concurrency: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self::offline()
    }
}

impl ClientConfig {
    pub fn offline() -> Self {
        Self {
            url: None,
            api_key: None,
            model: "unconfigured".into(),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            concurrency: DEFAULT_CONCURRENCY,
        }
    }

    pub fn endpoint(url: &str, model: &str) -> Self {
        Self { url: Some(url.into()), model: model.into(), ..Self::offline() }
    }

    /// Reads `AICARE_LLM_URL`, `AICARE_LLM_API_KEY`, `AICARE_LLM_MODEL` and
    /// `AICARE_LLM_TIMEOUT_SECS`. Without a URL the client is offline.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let timeout_secs = match var("AICARE_LLM_TIMEOUT_SECS").map(|v| v.parse::<u64>()) {
            Some(Ok(t)) if t > 0 => t,
            Some(_) => {
                log::warn!("ignoring invalid AICARE_LLM_TIMEOUT_SECS; using {DEFAULT_TIMEOUT_SECS}");
                DEFAULT_TIMEOUT_SECS
            }
            None => DEFAULT_TIMEOUT_SECS,
        };
        Self {
            url: var("AICARE_LLM_URL"),
            api_key: var("AICARE_LLM_API_KEY"),
            model: var("AICARE_LLM_MODEL").unwrap_or_else(|| "default".into()),
            timeout_secs,
            concurrency: DEFAULT_CONCURRENCY,
        }
    }

    pub fn is_offline(&self) -> bool {
        self.url.is_none()
    }
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

/// Chat-completion client with a cap on concurrent upstream requests.
#[derive(Clone)]
pub struct Advisor {
    config: ClientConfig,
    http: reqwest::Client,
    permits: Arc<Semaphore>,
}

impl Advisor {
    pub fn new(config: ClientConfig) -> Result<Self, AdvisoryError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| AdvisoryError::Network(e.to_string()))?;
        let permits = Arc::new(Semaphore::new(config.concurrency.max(1)));
        Ok(Self { config, http, permits })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Sends the prompt and parses the reply into sections. The narrative
    /// is not validated here.
    pub async fn request(&self, prompt: &PromptPair) -> Result<Narrative, AdvisoryError> {
        let url = self.config.url.as_deref().ok_or(AdvisoryError::Offline)?;
        let _permit = self.permits.acquire().await.map_err(|e| AdvisoryError::Network(e.to_string()))?;
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
        });
        let mut req = self.http.post(url).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| self.transport_error(e))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| self.transport_error(e))?;
        if !status.is_success() {
            let mut body = text;
            body.truncate(200);
            return Err(AdvisoryError::Status { status: status.as_u16(), body });
        }
        let reply: ChatReply = serde_json::from_str(&text).map_err(|e| AdvisoryError::Parse(e.to_string()))?;
        let content = reply
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| AdvisoryError::Parse("no choices in reply".into()))?
            .message
            .content;
        let sections = parse_sections(&content)?;
        Ok(Narrative {
            text: content,
            source: Source::Llm,
            model: reply.model.unwrap_or_else(|| self.config.model.clone()),
            sections,
        })
    }

    fn transport_error(&self, e: reqwest::Error) -> AdvisoryError {
        if e.is_timeout() {
            AdvisoryError::Timeout(self.config.timeout_secs)
        } else {
            AdvisoryError::Network(e.to_string())
        }
    }
}

/// What was served and why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdviceOutcome {
    pub narrative: Narrative,
    /// Set when the fallback replaced the upstream reply.
    pub fallback_reason: Option<String>,
    /// The upstream reply's validation, when one was received.
    pub validation: Option<ValidationReport>,
}

/// Requests a narrative, substituting `fallback` on any client error.
pub async fn request_advice(advisor: &Advisor, prompt: &PromptPair, fallback: Narrative) -> AdviceOutcome {
    match advisor.request(prompt).await {
        Ok(narrative) => AdviceOutcome { narrative, fallback_reason: None, validation: None },
        Err(e) => {
            if !matches!(e, AdvisoryError::Offline) {
                log::warn!("advice request failed, serving fallback: {e}");
            }
            AdviceOutcome { narrative: fallback, fallback_reason: Some(e.to_string()), validation: None }
        }
    }
}

/// The serving path: prompt, request, validation, and the fallback when
/// either the request or the validation fails. Errors only for a visit
/// the assessment does not have.
#[allow(clippy::too_many_arguments)]
pub async fn advise(
    advisor: &Advisor,
    task_def: &str,
    assessment: &RiskAssessment,
    schema: &FeatureSchema,
    pre: &Preprocessor,
    visit_idx: usize,
    top_k: usize,
) -> Result<AdviceOutcome, AdvisoryError> {
    let prompt = build_prompt(task_def, assessment, schema, visit_idx, top_k)?;
    let fallback = fallback_template(assessment, schema, pre, visit_idx, top_k)?;
    let mut outcome = request_advice(advisor, &prompt, fallback.clone()).await;
    if outcome.narrative.source == Source::Llm {
        let report = validate_narrative(&outcome.narrative, schema, assessment, visit_idx);
        if !report.passed {
            log::warn!("advice reply failed validation with {} violations", report.violations.len());
            outcome = AdviceOutcome {
                narrative: fallback,
                fallback_reason: Some("reply failed grounding validation".into()),
                validation: Some(report),
            };
        } else {
            outcome.validation = Some(report);
        }
    }
    Ok(outcome)
}
