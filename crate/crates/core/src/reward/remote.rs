use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::{RewardError, SemanticScorer};
use crate::http::{JsonRequest, Transport, UreqTransport};

/// Adequacy scorer behind an HTTP endpoint: POST
/// `{source, hypothesis, reference}` and read `{score}` in [0, 1].
/// In reference-free mode the reference is sent as `null`.
#[derive(Clone)]
pub struct RemoteScorer {
    pub url: String,
    pub reference_free: bool,
    pub timeout: Duration,
    transport: Arc<dyn Transport>,
}

impl RemoteScorer {
    pub fn new(url: impl Into<String>, reference_free: bool) -> Self {
        Self::with_transport(url, reference_free, Arc::new(UreqTransport))
    }

    pub fn with_transport(url: impl Into<String>, reference_free: bool, transport: Arc<dyn Transport>) -> Self {
        Self { url: url.into(), reference_free, timeout: Duration::from_secs(30), transport }
    }
}

impl SemanticScorer for RemoteScorer {
    fn score(&self, source: &[String], draft: &[String], refined: &[String]) -> Result<f64, RewardError> {
        let reference = if self.reference_free { Value::Null } else { json!(refined.join(" ")) };
        let request = JsonRequest {
            url: self.url.clone(),
            headers: Vec::new(),
            body: json!({
                "source": source.join(" "),
                "hypothesis": draft.join(" "),
                "reference": reference,
            }),
            timeout: self.timeout,
        };
        let resp = self.transport.post_json(&request).map_err(|e| RewardError::Scorer(e.to_string()))?;
        resp.get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| RewardError::Scorer(format!("response without numeric score: {resp}")))
    }
}
