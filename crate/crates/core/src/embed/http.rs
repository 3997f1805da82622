use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Texts per request.
    pub batch_size: usize,
    /// Concurrent requests.
    pub max_in_flight: usize,
    /// Extra attempts after the first failure of a request.
    pub retries: usize,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            batch_size: 64,
            max_in_flight: 4,
            retries: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Client for `POST {base_url}/embed` with body `{"texts": [...]}` answering
/// `{"embeddings": [[...], ...]}`. Texts are sent unmodified; truncation is
/// the server's business.
#[derive(Debug)]
pub struct HttpEmbedder {
    endpoint: String,
    base_url: String,
    cfg: HttpConfig,
    agent: ureq::Agent,
    dim: OnceLock<usize>,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, cfg: HttpConfig) -> Self {
        let base_url = base_url.into();
        let endpoint = format!("{}/embed", base_url.trim_end_matches('/'));
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpEmbedder {
            endpoint,
            base_url,
            cfg,
            agent,
            dim: OnceLock::new(),
        }
    }

    fn request_once(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, String> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { texts })
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if status != 200 {
            return Err(format!("{} returned HTTP {}", self.endpoint, status.as_u16()));
        }
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| format!("bad response body: {e}"))?;
        if body.embeddings.len() != texts.len() {
            return Err(format!(
                "sent {} texts, received {} embeddings",
                texts.len(),
                body.embeddings.len()
            ));
        }
        Ok(body.embeddings)
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let attempts = self.cfg.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff * (1 << (attempt - 1).min(6)) as u32);
            }
            match self.request_once(texts) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("embedding request attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(Error::Transport {
            attempts,
            message: last,
        })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}", self.base_url)
    }

    fn dimension(&self) -> Option<usize> {
        self.dim.get().copied()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let batches: Vec<&[&str]> = texts.chunks(self.cfg.batch_size.max(1)).collect();
        let results: Mutex<Vec<Option<Result<Vec<Vec<f64>>>>>> =
            Mutex::new((0..batches.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = self.cfg.max_in_flight.clamp(1, batches.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= batches.len() {
                        break;
                    }
                    let r = self.request(batches[i]);
                    let failed = r.is_err();
                    results.lock().expect("poisoned")[i] = Some(r);
                    if failed {
                        // stop handing out work
                        next.store(batches.len(), Ordering::Relaxed);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(texts.len());
        for r in results.into_inner().expect("poisoned") {
            let Some(r) = r else { continue };
            for v in r? {
                let v = EmbeddingVector::new(v)?;
                let dim = *self.dim.get_or_init(|| v.dim());
                if v.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: v.dim(),
                    });
                }
                out.push(v);
            }
        }
        if out.len() != texts.len() {
            return Err(Error::Transport {
                attempts: self.cfg.retries + 1,
                message: "incomplete response set".into(),
            });
        }
        Ok(out)
    }
}
