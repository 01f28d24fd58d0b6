//! The frozen text generator behind a uniform interface.

mod cache;
mod http;
mod mock;
mod prompt;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TaskKind;
use crate::error::{Error, Result};

pub use cache::{CacheEntry, CacheKey, ResponseCache};
pub use http::{HttpBackend, HttpBackendConfig, API_KEY_ENV};
pub use mock::{mock_generate, noise_fraction, MockBackend};
pub use prompt::{build_generation_prompt, parse_generation_prompt, ParsedPrompt, PromptTemplates};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl GenRequest {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::InvalidConfig("max_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature must be non-negative, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// A text completion service.
pub trait Backend: Send + Sync {
    /// Identity used in cache keys; two backends that may answer the same
    /// prompt differently must report different ids.
    fn id(&self) -> String;
    fn complete(&self, req: &GenRequest) -> Result<String>;
}

/// Wraps a backend and counts how many requests reach it.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, req: &GenRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(req)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, req: &GenRequest) -> Result<String> {
        (**self).complete(req)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub max_tokens: u32,
    /// Sampling temperature for candidate pools.
    pub candidate_temperature: f64,
    /// Temperature and seed for hypotheses `LLM(x ⊕ (x̃, ỹ))`. The defaults
    /// make hypothesis generation deterministic.
    pub hypothesis_temperature: f64,
    pub hypothesis_seed: u64,
    pub templates: PromptTemplates,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            max_tokens: 256,
            candidate_temperature: 0.8,
            hypothesis_temperature: 0.0,
            hypothesis_seed: 0,
            templates: PromptTemplates::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub candidates: Vec<String>,
}

impl CandidatePool {
    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    pub fn get(&self, i: usize) -> Option<&str> {
        self.candidates.get(i).map(String::as_str)
    }
}

/// A backend plus an optional persistent response cache.
#[derive(Clone)]
pub struct Generator {
    backend: Arc<dyn Backend>,
    cache: Option<Arc<ResponseCache>>,
    pub config: GeneratorConfig,
}

impl std::fmt::Debug for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Generator")
            .field("backend", &self.backend.id())
            .field("cache", &self.cache.as_ref().map(|c| c.dir().to_path_buf()))
            .field("config", &self.config)
            .finish()
    }
}

impl Generator {
    pub fn new(backend: Arc<dyn Backend>, config: GeneratorConfig) -> Self {
        Self { backend, cache: None, config }
    }

    pub fn mock() -> Self {
        Self::new(Arc::new(MockBackend), GeneratorConfig::default())
    }

    pub fn with_cache_dir(mut self, dir: impl AsRef<Path>) -> Result<Self> {
        self.cache = Some(Arc::new(ResponseCache::open(dir.as_ref())?));
        Ok(self)
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn generate(&self, req: &GenRequest) -> Result<String> {
        req.validate()?;
        let Some(cache) = &self.cache else {
            return self.backend.complete(req);
        };
        let key = CacheKey::new(&self.backend.id(), req);
        if let Some(hit) = cache.get(&key) {
            return Ok(hit);
        }
        let response = self.backend.complete(req)?;
        cache.put(&key, &response)?;
        Ok(response)
    }

    /// `h ← LLM(x ⊕ (x̃, ỹ))`.
    pub fn hypothesis(&self, task: TaskKind, x: &str, source: &str, target: &str) -> Result<String> {
        self.generate(&GenRequest {
            prompt: build_generation_prompt(&self.config.templates, task, x, source, target),
            temperature: self.config.hypothesis_temperature,
            seed: self.config.hypothesis_seed,
            max_tokens: self.config.max_tokens,
        })
    }

    /// K candidate targets for the memory `(x̃, ỹ)`, generated from x̃ with
    /// the memory itself as the demonstration. Requests use seeds
    /// `base_seed + 0 .. base_seed + K - 1` and run concurrently; order is
    /// preserved and any failure fails the whole pool.
    pub fn generate_candidates(&self, task: TaskKind, source: &str, target: &str, k: usize, base_seed: u64) -> Result<CandidatePool> {
        if k == 0 {
            return Err(Error::InvalidConfig("candidate pool size K must be at least 1".into()));
        }
        let prompt = build_generation_prompt(&self.config.templates, task, source, source, target);
        let candidates = (0..k as u64)
            .into_par_iter()
            .map(|i| {
                self.generate(&GenRequest {
                    prompt: prompt.clone(),
                    temperature: self.config.candidate_temperature,
                    seed: base_seed.wrapping_add(i),
                    max_tokens: self.config.max_tokens,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if candidates.len() != k {
            return Err(Error::PartialPool { expected: k, got: candidates.len() });
        }
        Ok(CandidatePool { candidates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FailAfter {
        ok: usize,
        calls: AtomicUsize,
    }

    impl Backend for FailAfter {
        fn id(&self) -> String {
            "fail-after".into()
        }
        fn complete(&self, req: &GenRequest) -> Result<String> {
            if self.calls.fetch_add(1, Ordering::SeqCst) >= self.ok {
                return Err(Error::BackendUnavailable { status: 503, body: "down".into() });
            }
            mock_generate(req)
        }
    }

    fn counting() -> (Arc<CountingBackend<MockBackend>>, Generator) {
        let b = Arc::new(CountingBackend::new(MockBackend));
        let g = Generator::new(b.clone(), GeneratorConfig::default());
        (b, g)
    }

    #[test]
    fn cache_serves_repeats_and_keys_on_temperature() {
        let dir = tempfile::tempdir().unwrap();
        let (b, g) = counting();
        let g = g.with_cache_dir(dir.path()).unwrap();
        let prompt = build_generation_prompt(&PromptTemplates::default(), TaskKind::Translation, "x", "a", "b c d");
        let mut req = GenRequest { prompt, temperature: 0.8, seed: 3, max_tokens: 16 };
        let first = g.generate(&req).unwrap();
        assert_eq!(g.generate(&req).unwrap(), first);
        assert_eq!(b.calls(), 1);
        req.temperature = 0.5;
        g.generate(&req).unwrap();
        assert_eq!(b.calls(), 2);
    }

    #[test]
    fn cache_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let prompt = build_generation_prompt(&PromptTemplates::default(), TaskKind::Dialogue, "hi", "hello", "hey there you");
        let req = GenRequest { prompt, temperature: 0.8, seed: 7, max_tokens: 16 };
        let (b1, g1) = counting();
        let out = g1.with_cache_dir(dir.path()).unwrap().generate(&req).unwrap();
        let (b2, g2) = counting();
        assert_eq!(g2.with_cache_dir(dir.path()).unwrap().generate(&req).unwrap(), out);
        assert_eq!((b1.calls(), b2.calls()), (1, 0));
    }

    #[test]
    fn candidate_pools_have_exactly_k() {
        let (b, g) = counting();
        for k in [1, 3, 5] {
            let pool = g.generate_candidates(TaskKind::Summarization, "src words here", "t0 t1 t2 t3 t4 t5 t6 t7 t8 t9", k, 11).unwrap();
            assert_eq!(pool.k(), k);
        }
        assert_eq!(b.calls(), 9);
        assert!(g.generate_candidates(TaskKind::Summarization, "s", "t", 0, 0).is_err());
    }

    #[test]
    fn partial_pool_is_an_error() {
        let g = Generator::new(Arc::new(FailAfter { ok: 2, calls: AtomicUsize::new(0) }), GeneratorConfig::default());
        let err = g.generate_candidates(TaskKind::Summarization, "s", "t u v", 3, 0).unwrap_err();
        assert!(matches!(err, Error::BackendUnavailable { status: 503, .. }));
    }

    #[test]
    fn invalid_requests() {
        let g = Generator::mock();
        let req = GenRequest { prompt: String::new(), temperature: 0.1, seed: 0, max_tokens: 0 };
        assert!(matches!(g.generate(&req), Err(Error::InvalidConfig(_))));
    }
}
