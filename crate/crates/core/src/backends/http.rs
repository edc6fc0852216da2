use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::prompts::PromptStyle;
use super::{Backend, SampleBatch, SamplingSpec};
use crate::consistency::{extract_answer, Problem, ResponseSample, Split};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, problem_seed, rng_from};

/// Connection settings for an OpenAI-compatible chat-completions server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HttpConfig {
    /// Server root; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: String,
    /// Maximum in-flight requests per call.
    pub concurrency: usize,
    pub max_attempts: u32,
    /// First retry delay; doubles after every failed attempt.
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub prompt_style: PromptStyle,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            concurrency: 8,
            max_attempts: 3,
            backoff_ms: 500,
            timeout_secs: 300,
            prompt_style: PromptStyle::Gsm8k,
        }
    }
}

impl HttpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concurrency == 0 {
            return Err(Error::validation("http.concurrency", "must be positive"));
        }
        if self.max_attempts == 0 {
            return Err(Error::validation("http.max_attempts", "must be positive"));
        }
        if self.base_url.is_empty() {
            return Err(Error::validation("http.base_url", "must not be empty"));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

struct Completion {
    text: String,
    truncated: bool,
    model: Option<String>,
}

struct Request {
    prompt: String,
    temperature: f64,
    top_p: f64,
    max_tokens: usize,
    seed: u64,
}

/// Sampling client for a served model. Training through it is not supported;
/// its samples feed pair construction and export.
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        config.validate()?;
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build();
        let token = std::env::var(&config.api_key_env).ok().filter(|t| !t.is_empty());
        Ok(HttpBackend {
            agent: ureq::Agent::new_with_config(agent_config),
            config,
            token,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn post_once(&self, req: &Request) -> std::result::Result<Completion, (bool, String)> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "n": 1,
            "max_tokens": req.max_tokens,
            // Servers commonly reject seeds outside the signed 32-bit range.
            "seed": req.seed & 0x7fff_ffff,
        });
        let mut builder = self.agent.post(&self.endpoint());
        if let Some(token) = &self.token {
            builder = builder.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = builder.send_json(&body).map_err(|e| (true, e.to_string()))?;
        let status = response.status().as_u16();
        if status != 200 {
            let retry = status == 429 || status >= 500;
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            return Err((retry, format!("HTTP {status}: {}", detail.trim())));
        }
        let parsed: CompletionResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| (false, format!("malformed completion: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or((false, "completion has no choices".to_string()))?;
        Ok(Completion {
            text: choice.message.content.unwrap_or_default(),
            truncated: choice.finish_reason.as_deref() == Some("length"),
            model: parsed.model,
        })
    }

    fn post(&self, req: &Request) -> Result<Completion> {
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            match self.post_once(req) {
                Ok(c) => return Ok(c),
                Err((retry, message)) => {
                    last = message;
                    if !retry {
                        return Err(Error::BackendUnavailable {
                            attempts: attempt,
                            message: last,
                        });
                    }
                    if attempt < self.config.max_attempts {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(Error::BackendUnavailable {
            attempts: self.config.max_attempts,
            message: last,
        })
    }

    /// Issue all requests with at most `concurrency` in flight; results are
    /// returned in request order regardless of completion order.
    fn post_all(&self, requests: &[Request]) -> Result<Vec<Completion>> {
        let slots: Mutex<Vec<Option<Result<Completion>>>> =
            Mutex::new((0..requests.len()).map(|_| None).collect());
        let workers = self.config.concurrency.min(requests.len()).max(1);
        thread::scope(|scope| {
            for w in 0..workers {
                let slots = &slots;
                scope.spawn(move || {
                    for i in (w..requests.len()).step_by(workers) {
                        let result = self.post(&requests[i]);
                        slots.lock().expect("no worker panics while holding the lock")[i] = Some(result);
                    }
                });
            }
        });
        slots
            .into_inner()
            .expect("workers joined")
            .into_iter()
            .map(|slot| slot.expect("every slot is filled"))
            .collect()
    }
}

impl Backend for HttpBackend {
    fn sample_responses(&self, problem: &Problem, spec: &SamplingSpec) -> Result<SampleBatch> {
        spec.validate()?;
        let prompt = self.config.prompt_style.render_response(&problem.text)?;
        let base = problem_seed(spec.seed, &problem.id);
        let requests: Vec<Request> = (0..spec.n)
            .map(|i| Request {
                prompt: prompt.clone(),
                temperature: spec.temperature,
                top_p: spec.top_p,
                max_tokens: spec.max_tokens,
                seed: derive_seed(base, "http/sample", i as u64),
            })
            .collect();
        let completions = self.post_all(&requests)?;
        let kind = self.config.prompt_style.extractor();
        let mut batch = SampleBatch::default();
        for (idx, c) in completions.into_iter().enumerate() {
            if c.truncated {
                batch.truncated.push(idx);
            }
            if batch.model.is_none() {
                batch.model = c.model;
            }
            batch.samples.push(ResponseSample {
                problem_id: problem.id.clone(),
                sample_idx: idx,
                pool: spec.pool,
                temperature: spec.temperature,
                answer: extract_answer(&c.text, kind),
                text: c.text,
            });
        }
        Ok(batch)
    }

    fn generate_queries(
        &mut self,
        seed_problems: &[Problem],
        n_shots: usize,
        count: usize,
        spec: &SamplingSpec,
    ) -> Result<Vec<Problem>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        if n_shots == 0 || n_shots > seed_problems.len() {
            return Err(Error::InvalidInput(format!(
                "n_shots = {n_shots} needs 1..={} seed problems",
                seed_problems.len()
            )));
        }
        let mut rng = rng_from(derive_seed(spec.seed, "generate", 0));
        let mut requests = Vec::with_capacity(count);
        for j in 0..count {
            let shots: Vec<&str> = sample_indices(&mut rng, seed_problems.len(), n_shots)
                .into_iter()
                .map(|i| seed_problems[i].text.as_str())
                .collect();
            requests.push(Request {
                prompt: self.config.prompt_style.render_query(&shots)?,
                temperature: spec.temperature,
                top_p: spec.top_p,
                max_tokens: spec.max_tokens,
                seed: derive_seed(spec.seed, "http/generate", j as u64),
            });
        }
        let tag = (spec.seed ^ (spec.seed >> 32)) as u32;
        let mut out: Vec<Problem> = Vec::new();
        for (j, c) in self.post_all(&requests)?.into_iter().enumerate() {
            let Some(text) = self.config.prompt_style.parse_generated_query(&c.text) else {
                continue;
            };
            let duplicate = seed_problems.iter().any(|p| p.text.trim() == text)
                || out.iter().any(|p| p.text == text);
            if !duplicate {
                out.push(Problem::generated(format!("gen-{tag:08x}-{j:04}"), text, Split::Train));
            }
        }
        Ok(out)
    }

    fn greedy_answer(&self, problem: &Problem) -> Result<Option<String>> {
        let request = Request {
            prompt: self.config.prompt_style.render_response(&problem.text)?,
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: SamplingSpec::default().max_tokens,
            seed: 0,
        };
        let c = self.post(&request)?;
        Ok(extract_answer(&c.text, self.config.prompt_style.extractor()))
    }
}
