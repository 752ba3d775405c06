use super::{
    extract_json, CallCounter, CallLedger, Gateway, GatewayError, GatewayMode, ModelRequest,
    ModelResponse, RunId, Usage,
};
use base64::Engine;
use serde_json::{json, Value};
use std::time::Duration;

pub const ENV_ENDPOINT: &str = "MEXP_ENDPOINT_URL";
pub const ENV_API_KEY: &str = "MEXP_API_KEY";
pub const ENV_MODEL: &str = "MEXP_MODEL";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://host/v1`.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl LiveConfig {
    pub fn from_env() -> Result<Self, GatewayError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| GatewayError::EndpointError(format!("{ENV_ENDPOINT} not set")))?;
        Ok(Self {
            endpoint,
            api_key: std::env::var(ENV_API_KEY).ok(),
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".into()),
            retries: 2,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        })
    }
}

/// OpenAI-compatible chat-completions client with base64 screenshots.
pub struct LiveGateway {
    config: LiveConfig,
    agent: ureq::Agent,
    ledger: CallLedger,
}

impl LiveGateway {
    pub fn new(config: LiveConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self {
            config,
            agent,
            ledger: CallLedger::default(),
        }
    }

    /// Request body for a model request. Screenshot handles that name a
    /// readable file are inlined as data URLs; others are skipped.
    pub fn request_body(&self, req: &ModelRequest) -> Value {
        let mut content = vec![json!({"type": "text", "text": req.prompt_text()})];
        for handle in &req.image_refs {
            if let Ok(bytes) = std::fs::read(handle) {
                let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                content.push(json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:image/png;base64,{b64}")}
                }));
            }
        }
        json!({
            "model": self.config.model,
            "max_tokens": req.context_budget.min(4096),
            "messages": [{"role": "user", "content": content}],
        })
    }

    fn post(&self, body: &Value) -> Result<Value, GatewayError> {
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let mut last_err = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
            }
            let mut request = self.agent.post(&url);
            if let Some(key) = &self.config.api_key {
                request = request.set("Authorization", &format!("Bearer {key}"));
            }
            match request.send_json(body.clone()) {
                Ok(resp) => {
                    return resp
                        .into_json::<Value>()
                        .map_err(|e| GatewayError::EndpointError(format!("decode: {e}")))
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(GatewayError::EndpointError(last_err))
    }
}

/// Pull text and usage out of a chat-completions response.
pub fn parse_completion(value: &Value) -> Result<ModelResponse, GatewayError> {
    let text = value["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| GatewayError::EndpointError("response has no message content".into()))?
        .to_string();
    let usage = Usage {
        prompt_tokens: value["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: value["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    };
    Ok(ModelResponse {
        parsed: extract_json(&text),
        text,
        usage,
    })
}

impl Gateway for LiveGateway {
    fn mode(&self) -> GatewayMode {
        GatewayMode::Live
    }

    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        self.ledger.record(&req.run_id, req.role_tag);
        req.validate()?;
        let body = self.request_body(req);
        parse_completion(&self.post(&body)?)
    }

    fn open_run(&self, run: &RunId) {
        self.ledger.open(run);
    }

    fn call_count(&self, run: &RunId) -> Result<CallCounter, GatewayError> {
        self.ledger.snapshot(run)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::RoleTag;

    fn gateway() -> LiveGateway {
        LiveGateway::new(LiveConfig {
            endpoint: "http://127.0.0.1:9".into(),
            api_key: None,
            model: "test-model".into(),
            retries: 0,
            backoff: Duration::ZERO,
            timeout: Duration::from_millis(200),
        })
    }

    #[test]
    fn body_inlines_screenshots_as_data_urls() {
        let dir = tempfile::tempdir().unwrap();
        let shot = dir.path().join("s.png");
        std::fs::write(&shot, [1u8, 2, 3]).unwrap();
        let req = ModelRequest::new(RunId::new("r"), RoleTag::DecideAction)
            .key("goal", "g")
            .image(shot.display().to_string())
            .image("not-a-file");
        let body = gateway().request_body(&req);
        assert_eq!(body["model"], "test-model");
        let content = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(content.len(), 2);
        assert_eq!(content[1]["image_url"]["url"], "data:image/png;base64,AQID");
    }

    #[test]
    fn parses_completion_payload() {
        let v = json!({
            "choices": [{"message": {"content": "ok {\"op\": \"wait\"}"}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 3}
        });
        let r = parse_completion(&v).unwrap();
        assert_eq!(r.parsed, Some(json!({"op": "wait"})));
        assert_eq!(r.usage.prompt_tokens, 10);
        assert!(parse_completion(&json!({})).is_err());
    }

    #[test]
    fn unreachable_endpoint_is_counted_and_reported() {
        let gw = gateway();
        let run = RunId::new("r");
        let err = gw
            .complete(&ModelRequest::new(run.clone(), RoleTag::Judge))
            .unwrap_err();
        assert!(matches!(err, GatewayError::EndpointError(_)));
        assert_eq!(gw.call_count(&run).unwrap().total, 1);
    }
}
