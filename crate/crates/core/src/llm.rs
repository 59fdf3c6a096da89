//! Generation backends, bounded-parallel batching and the response journal.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::prompt::PromptText;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Recorded against the item; the run continues.
    PerItem,
    /// Stops the run.
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct BackendError {
    pub kind: ErrorKind,
    pub message: String,
}

impl BackendError {
    pub fn per_item(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::PerItem,
            message: message.into(),
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Fatal,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenRequest {
    pub prompt: PromptText,
    pub max_new_tokens: u32,
    pub temperature: f32,
}

impl GenRequest {
    pub fn item_id(&self) -> &str {
        &self.prompt.item_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenResponse {
    pub item_id: String,
    /// Verbatim model output.
    pub text: String,
    pub latency: Duration,
    pub backend: String,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError>;
}

/// Canned responses for tests and dry runs. Latency is reported as zero.
#[derive(Debug, Clone)]
pub enum MockBackend {
    Constant(String),
    /// Returns the prompt text.
    Echo,
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        match self {
            MockBackend::Constant(_) => "mock-constant",
            MockBackend::Echo => "mock-echo",
        }
    }

    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError> {
        let text = match self {
            MockBackend::Constant(text) => text.clone(),
            MockBackend::Echo => request.prompt.text.clone(),
        };
        Ok(GenResponse {
            item_id: request.item_id().to_string(),
            text,
            latency: Duration::ZERO,
            backend: self.name().to_string(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub item_id: String,
    pub text: String,
}

/// Recorded responses keyed by item id. A miss is fatal: the recording
/// does not cover the run.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        Self {
            responses: records.into_iter().map(|r| (r.item_id, r.text)).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| BackendError::fatal(format!("cannot read {}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::fatal(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(&line)
                .map_err(|e| BackendError::fatal(format!("{}:{}: {e}", path.display(), n + 1)))?;
            records.push(record);
        }
        Ok(Self::from_records(records))
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError> {
        let text = self.responses.get(request.item_id()).ok_or_else(|| {
            BackendError::fatal(format!("replay file has no response for item {:?}", request.item_id()))
        })?;
        Ok(GenResponse {
            item_id: request.item_id().to_string(),
            text: text.clone(),
            latency: Duration::ZERO,
            backend: self.name().to_string(),
        })
    }
}

fn default_prompt_field() -> String {
    "prompt".into()
}
fn default_max_tokens_field() -> String {
    "max_new_tokens".into()
}
fn default_temperature_field() -> String {
    "temperature".into()
}
fn default_response_pointer() -> String {
    "/text".into()
}
fn default_timeout_ms() -> u64 {
    120_000
}
fn default_attempts() -> u32 {
    4
}
fn default_backoff_ms() -> u64 {
    500
}

/// Completion endpoint taking `{prompt, max_new_tokens, temperature}` and
/// answering `{text}`; field names and the response path are configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub endpoint: String,
    /// Header carrying credentials, e.g. `Authorization`.
    #[serde(default)]
    pub auth_header: Option<String>,
    /// Environment variable holding the header value.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_prompt_field")]
    pub prompt_field: String,
    #[serde(default = "default_max_tokens_field")]
    pub max_tokens_field: String,
    #[serde(default = "default_temperature_field")]
    pub temperature_field: String,
    /// JSON pointer to the generated text in the response body.
    #[serde(default = "default_response_pointer")]
    pub response_pointer: String,
    /// Extra fields merged into every request body (model name etc.).
    #[serde(default)]
    pub extra: Option<serde_json::Map<String, Value>>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            auth_header: None,
            auth_env: None,
            prompt_field: default_prompt_field(),
            max_tokens_field: default_max_tokens_field(),
            temperature_field: default_temperature_field(),
            response_pointer: default_response_pointer(),
            extra: None,
            timeout_ms: default_timeout_ms(),
            attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    auth: Option<(String, String)>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let auth = match (&config.auth_header, &config.auth_env) {
            (Some(header), Some(var)) => {
                let value = std::env::var(var)
                    .map_err(|_| BackendError::fatal(format!("environment variable {var} is not set")))?;
                Some((header.clone(), value))
            }
            (None, None) => None,
            _ => return Err(BackendError::fatal("auth_header and auth_env must be set together")),
        };
        if config.attempts == 0 {
            return Err(BackendError::fatal("attempts must be at least 1"));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, auth, agent })
    }

    fn body(&self, request: &GenRequest) -> Value {
        let mut body = self.config.extra.clone().unwrap_or_default();
        body.insert(self.config.prompt_field.clone(), request.prompt.text.clone().into());
        body.insert(self.config.max_tokens_field.clone(), request.max_new_tokens.into());
        body.insert(
            self.config.temperature_field.clone(),
            (request.temperature as f64).into(),
        );
        Value::Object(body)
    }

    fn attempt(&self, body: &str) -> Result<String, String> {
        let mut call = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some((name, value)) = &self.auth {
            call = call.header(name, value);
        }
        let mut response = call.send(body).map_err(|e| format!("request failed: {e}"))?;
        let status = response.status();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| format!("reading body: {e}"))?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()));
        }
        let json: Value = serde_json::from_str(&text).map_err(|e| format!("response is not JSON: {e}"))?;
        json.pointer(&self.config.response_pointer)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| format!("no string at {} in response", self.config.response_pointer))
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError> {
        let body = self.body(request).to_string();
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for attempt in 0..self.config.attempts {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            let started = Instant::now();
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(GenResponse {
                        item_id: request.item_id().to_string(),
                        text,
                        latency: started.elapsed(),
                        backend: self.name().to_string(),
                    })
                }
                Err(e) => last = e,
            }
        }
        Err(BackendError::per_item(format!(
            "{} after {} attempts",
            last, self.config.attempts
        )))
    }
}

/// Generate for every request with at most `parallelism` in flight.
/// Results come back in input order. `on_ready` sees each result in input
/// order as soon as every earlier one is done. A fatal error stops new
/// dispatches; undispatched items report it too.
pub fn run_batch<F>(
    requests: &[GenRequest],
    backend: &dyn Backend,
    parallelism: usize,
    on_ready: F,
) -> Vec<Result<GenResponse, BackendError>>
where
    F: FnMut(usize, &Result<GenResponse, BackendError>) + Send,
{
    let parallelism = parallelism.clamp(1, requests.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    struct Ordered<F> {
        slots: Vec<Option<Result<GenResponse, BackendError>>>,
        flushed: usize,
        on_ready: F,
    }
    let state = Mutex::new(Ordered {
        slots: vec![None; requests.len()],
        flushed: 0,
        on_ready,
    });

    std::thread::scope(|scope| {
        for _ in 0..parallelism {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= requests.len() {
                    break;
                }
                let result = if abort.load(Ordering::SeqCst) {
                    Err(BackendError::fatal("run aborted after a fatal backend error"))
                } else {
                    backend.generate(&requests[i])
                };
                if matches!(&result, Err(e) if e.kind == ErrorKind::Fatal) {
                    abort.store(true, Ordering::SeqCst);
                }
                let mut guard = state.lock().expect("batch state");
                let st = &mut *guard;
                st.slots[i] = Some(result);
                while st.flushed < st.slots.len() {
                    let Some(ready) = st.slots[st.flushed].as_ref() else {
                        break;
                    };
                    (st.on_ready)(st.flushed, ready);
                    st.flushed += 1;
                }
            });
        }
    });

    state
        .into_inner()
        .expect("batch state")
        .slots
        .into_iter()
        .map(|r| r.expect("every request answered"))
        .collect()
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub item_id: String,
    pub prompt_hash: String,
    pub text: String,
    pub latency_ms: u64,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JournalEntry {
    pub fn new(prompt: &PromptText, result: &Result<GenResponse, BackendError>, backend: &str) -> Self {
        match result {
            Ok(r) => Self {
                item_id: prompt.item_id.clone(),
                prompt_hash: prompt.hash(),
                text: r.text.clone(),
                latency_ms: r.latency.as_millis() as u64,
                backend: r.backend.clone(),
                error: None,
            },
            Err(e) => Self {
                item_id: prompt.item_id.clone(),
                prompt_hash: prompt.hash(),
                text: String::new(),
                latency_ms: 0,
                backend: backend.to_string(),
                error: Some(e.message.clone()),
            },
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("journal {path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

/// Append-only JSON-lines journal, flushed per entry.
pub struct Journal {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Journal {
    /// Read every entry. A torn final line (crash mid-write) is dropped;
    /// corruption anywhere else is an error.
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<JournalEntry>, JournalError> {
        let path = path.as_ref();
        let io = |source| JournalError::Io {
            path: path.to_path_buf(),
            source,
        };
        let text = std::fs::read_to_string(path).map_err(io)?;
        let lines: Vec<&str> = text.split('\n').collect();
        let mut entries = Vec::new();
        for (n, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(entry) => entries.push(entry),
                Err(_) if n + 1 == lines.len() => break,
                Err(e) => {
                    return Err(JournalError::Corrupt {
                        path: path.to_path_buf(),
                        line: n + 1,
                        reason: e.to_string(),
                    })
                }
            }
        }
        Ok(entries)
    }

    /// Replace the journal with `entries` (write-then-rename) and keep it
    /// open for appending.
    pub fn rewrite(path: impl AsRef<Path>, entries: &[JournalEntry]) -> Result<Self, JournalError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| JournalError::Io {
            path: path.clone(),
            source,
        };
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp).map_err(io)?);
            for entry in entries {
                write_entry(&mut out, entry).map_err(io)?;
            }
            out.flush().map_err(io)?;
            out.get_ref().sync_all().map_err(io)?;
        }
        std::fs::rename(&tmp, &path).map_err(io)?;
        let file = OpenOptions::new().append(true).open(&path).map_err(io)?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, entry: &JournalEntry) -> Result<(), JournalError> {
        write_entry(&mut self.out, entry)
            .and_then(|_| self.out.flush())
            .map_err(|source| JournalError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

fn write_entry<W: Write>(out: &mut W, entry: &JournalEntry) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, entry)?;
    out.write_all(b"\n")
}
