//! Client for an Etherscan-style `getsourcecode` endpoint.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;

use crate::types::{Address, SourceBundle, SourceFile};

pub const DEFAULT_REQUESTS_PER_SECOND: f64 = 5.0;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const API_KEY_ENV: &str = "EXPLORER_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct TransportError {
    pub retryable: bool,
    pub message: String,
}

pub trait HttpTransport: Send + Sync {
    fn get(&self, url: &str, query: &[(&str, &str)]) -> Result<String, TransportError>;
}

/// Blocking HTTP over `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        UreqTransport { agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build() }
    }
}

impl HttpTransport for UreqTransport {
    fn get(&self, url: &str, query: &[(&str, &str)]) -> Result<String, TransportError> {
        let mut request = self.agent.get(url);
        for (k, v) in query {
            request = request.query(k, v);
        }
        match request.call() {
            Ok(response) => response
                .into_string()
                .map_err(|e| TransportError { retryable: true, message: format!("reading body: {e}") }),
            Err(ureq::Error::Status(code, _)) => Err(TransportError {
                retryable: code == 429 || code >= 500,
                message: format!("HTTP status {code}"),
            }),
            Err(e) => Err(TransportError { retryable: true, message: e.to_string() }),
        }
    }
}

/// Monotonic time source; injectable so tests can count without sleeping.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorerConfig {
    pub base_url: String,
    pub api_key: String,
    pub requests_per_second: f64,
    pub max_attempts: u32,
    /// First retry delay; doubles on each further retry.
    pub backoff: Duration,
}

impl ExplorerConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        ExplorerConfig {
            base_url: base_url.into(),
            api_key: api_key.into(),
            requests_per_second: DEFAULT_REQUESTS_PER_SECOND,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FetchError {
    /// The explorer has no verified source for the address. Not retryable.
    #[error("{0} has no verified source")]
    NotVerified(Address),
    #[error("explorer request failed after {attempts} attempts: {message}")]
    Retryable { attempts: u32, message: String },
    #[error("explorer response rejected: {0}")]
    Api(String),
    #[error("explorer configuration: {0}")]
    Config(String),
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Retryable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedSource {
    pub bundle: SourceBundle,
    pub compiler_version: String,
    pub contract_name: String,
}

#[derive(Deserialize)]
struct ApiResponse {
    status: String,
    #[serde(default)]
    message: String,
    result: serde_json::Value,
}

#[derive(Deserialize)]
#[serde(rename_all = "PascalCase")]
struct SourceEntry {
    #[serde(default)]
    source_code: String,
    #[serde(default)]
    compiler_version: String,
    #[serde(default)]
    contract_name: String,
}

/// Token bucket of capacity one: consecutive grants are at least `1/R` apart.
struct RateLimiter {
    interval: Duration,
    last: Mutex<Option<Duration>>,
}

impl RateLimiter {
    fn new(requests_per_second: f64) -> Self {
        let interval = if requests_per_second > 0.0 {
            Duration::from_secs_f64(1.0 / requests_per_second)
        } else {
            Duration::ZERO
        };
        RateLimiter { interval, last: Mutex::new(None) }
    }

    /// Holds the lock across the wait so grants are serialized.
    fn acquire(&self, clock: &dyn Clock) {
        let mut last = self.last.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let due = prev + self.interval;
            let now = clock.now();
            if due > now {
                clock.sleep(due - now);
            }
        }
        *last = Some(clock.now());
    }
}

pub struct ExplorerClient<T: HttpTransport = UreqTransport, C: Clock = SystemClock> {
    config: ExplorerConfig,
    transport: T,
    clock: C,
    limiter: RateLimiter,
}

impl ExplorerClient {
    pub fn with_defaults(config: ExplorerConfig) -> Self {
        ExplorerClient::new(config, UreqTransport::default(), SystemClock::default())
    }
}

impl<T: HttpTransport, C: Clock> ExplorerClient<T, C> {
    pub fn new(config: ExplorerConfig, transport: T, clock: C) -> Self {
        let limiter = RateLimiter::new(config.requests_per_second);
        ExplorerClient { config, transport, clock, limiter }
    }

    pub fn fetch_source(&self, address: Address) -> Result<FetchedSource, FetchError> {
        if self.config.api_key.is_empty() {
            return Err(FetchError::Config(format!("no API key; set {API_KEY_ENV}")));
        }
        let address_text = address.to_string();
        let query = [
            ("module", "contract"),
            ("action", "getsourcecode"),
            ("address", address_text.as_str()),
            ("apikey", self.config.api_key.as_str()),
        ];
        let attempts = self.config.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                self.clock.sleep(self.config.backoff * 2u32.pow(attempt - 2));
            }
            self.limiter.acquire(&self.clock);
            match self.transport.get(&self.config.base_url, &query) {
                Ok(body) => match parse_response(address, &body) {
                    Err(Attempt::Retry(message)) => last_error = message,
                    Err(Attempt::Fatal(e)) => return Err(e),
                    Ok(source) => return Ok(source),
                },
                Err(e) if e.retryable => last_error = e.message,
                Err(e) => return Err(FetchError::Api(e.message)),
            }
            log::debug!("explorer attempt {attempt} for {address} failed: {last_error}");
        }
        Err(FetchError::Retryable { attempts, message: last_error })
    }
}

/// Parses a `getsourcecode` response body, e.g. one saved to disk.
pub fn parse_source_response(address: Address, body: &str) -> Result<FetchedSource, FetchError> {
    parse_response(address, body).map_err(|e| match e {
        Attempt::Retry(message) => FetchError::Api(message),
        Attempt::Fatal(e) => e,
    })
}

enum Attempt {
    Retry(String),
    Fatal(FetchError),
}

fn parse_response(address: Address, body: &str) -> Result<FetchedSource, Attempt> {
    let response: ApiResponse =
        serde_json::from_str(body).map_err(|e| Attempt::Fatal(FetchError::Api(format!("malformed JSON: {e}"))))?;
    if response.status != "1" {
        let detail = response.result.as_str().unwrap_or(&response.message).to_string();
        if detail.to_ascii_lowercase().contains("rate limit") {
            return Err(Attempt::Retry(detail));
        }
        return Err(Attempt::Fatal(FetchError::Api(detail)));
    }
    let entries: Vec<SourceEntry> = serde_json::from_value(response.result)
        .map_err(|e| Attempt::Fatal(FetchError::Api(format!("unexpected result shape: {e}"))))?;
    let entry = entries.into_iter().next().ok_or_else(|| Attempt::Fatal(FetchError::Api("empty result".into())))?;
    if entry.source_code.trim().is_empty() {
        return Err(Attempt::Fatal(FetchError::NotVerified(address)));
    }
    let bundle = decode_source_code(&entry.source_code, &entry.contract_name).map_err(Attempt::Fatal)?;
    Ok(FetchedSource { bundle, compiler_version: entry.compiler_version, contract_name: entry.contract_name })
}

/// Decodes a `SourceCode` field into a bundle.
///
/// Multi-file payloads arrive as a JSON object wrapped in one extra pair of
/// braces, holding either `{"sources": {path: {content}}}` or a bare
/// `{path: {content}}` map. Anything else is a single file.
pub fn decode_source_code(source_code: &str, contract_name: &str) -> Result<SourceBundle, FetchError> {
    let trimmed = source_code.trim();
    let entry_contract = (!contract_name.is_empty()).then(|| contract_name.to_string());
    let json_text = if trimmed.starts_with("{{") && trimmed.ends_with("}}") {
        Some(&trimmed[1..trimmed.len() - 1])
    } else if trimmed.starts_with('{') {
        Some(trimmed)
    } else {
        None
    };
    if let Some(text) = json_text {
        match serde_json::from_str::<serde_json::Value>(text) {
            Ok(value) => {
                let files = files_from_json(&value)?;
                return Ok(SourceBundle { files, entry_contract });
            }
            Err(e) if trimmed.starts_with("{{") => {
                return Err(FetchError::Api(format!("multi-file payload is not JSON: {e}")));
            }
            Err(_) => {}
        }
    }
    let name = if contract_name.is_empty() { "Contract" } else { contract_name };
    let mut bundle = SourceBundle::single(format!("{name}.sol"), source_code);
    bundle.entry_contract = entry_contract;
    Ok(bundle)
}

fn files_from_json(value: &serde_json::Value) -> Result<Vec<SourceFile>, FetchError> {
    let map = value
        .get("sources")
        .unwrap_or(value)
        .as_object()
        .ok_or_else(|| FetchError::Api("multi-file payload has no path map".into()))?;
    let files: Vec<SourceFile> = map
        .iter()
        .map(|(path, file)| {
            let content = file
                .get("content")
                .and_then(|c| c.as_str())
                .ok_or_else(|| FetchError::Api(format!("file `{path}` has no content")))?;
            Ok(SourceFile { path: path.clone(), content: content.to_string() })
        })
        .collect::<Result<_, FetchError>>()?;
    if files.is_empty() {
        return Err(FetchError::Api("multi-file payload lists no files".into()));
    }
    Ok(files)
}
