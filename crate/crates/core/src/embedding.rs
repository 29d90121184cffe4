//! Vector embeddings behind a single provider contract.
//!
//! Three providers implement [`EmbeddingProvider`]: a deterministic offline
//! character n-gram hashing provider, a model-backed provider that reads the
//! final token's hidden state under bidirectional attention, and a remote
//! HTTP provider. Cosine similarity lives here too.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TinyLm;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("non-finite value in vector")]
    NonFinite,
    #[error("empty text")]
    EmptyText,
    #[error("model error: {0}")]
    Model(#[from] crate::model::ModelError),
    #[error("http request failed after {attempts} attempts: {message}")]
    Http { attempts: u32, message: String },
    #[error("response schema mismatch: {0}")]
    Schema(String),
    #[error("provider returned dim {got}, expected {expected}")]
    RemoteDim { got: usize, expected: usize },
}

/// Fixed-length vector of finite 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    values: Vec<f64>,
}

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &Vector) -> Result<f64, EmbedError> {
        if self.dim() != other.dim() {
            return Err(EmbedError::DimMismatch(self.dim(), other.dim()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-normalized copy. Errors on zero norm.
    pub fn normalized(&self) -> Result<Vector, EmbedError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(EmbedError::ZeroNorm);
        }
        Ok(Vector {
            values: self.values.iter().map(|v| v / n).collect(),
        })
    }
}

/// Cosine similarity, clamped to [-1, 1] against rounding. Bitwise-equal
/// inputs short-circuit to exactly 1.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimMismatch(u.dim(), v.dim()));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::ZeroNorm);
    }
    if u.values == v.values {
        return Ok(1.0);
    }
    Ok((u.dot(v)? / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hashing,
    Model,
    Remote,
}

/// Contract every embedding backend satisfies. Providers are read-only after
/// construction and shareable across worker threads.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn kind(&self) -> ProviderKind;
    fn embed(&self, text: &str) -> Result<Vector, EmbedError>;
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic offline provider: character n-gram (n = 2..4) feature
/// hashing with signed buckets, L2-normalized. Texts shorter than two
/// characters hash the whole text as a single feature so the output never
/// degenerates to the zero vector.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    dim: usize,
    seed: u64,
}

impl HashingProvider {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "hashing dim must be positive");
        Self { dim, seed }
    }
}

impl Default for HashingProvider {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM, 0)
    }
}

pub fn embed_hashing(text: &str, dim: usize, seed: u64) -> Result<Vector, EmbedError> {
    if text.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let chars: Vec<char> = text.chars().collect();
    let mut acc = vec![0.0f64; dim];
    let mut bump = |gram: &[char]| {
        let s: String = gram.iter().collect();
        let h = fnv1a(seed, s.as_bytes());
        let bucket = (h >> 1) as usize % dim;
        let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    };
    if chars.len() < 2 {
        bump(&chars);
    } else {
        for n in 2..=4usize {
            if chars.len() < n {
                break;
            }
            for w in chars.windows(n) {
                bump(w);
            }
        }
    }
    let v = Vector::new(acc)?;
    v.normalized()
}

impl EmbeddingProvider for HashingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Hashing
    }

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        embed_hashing(text, self.dim, self.seed)
    }
}

/// Model-backed provider: encodes the text and returns the final token's
/// final-layer hidden state under bidirectional attention.
pub struct ModelProvider {
    model: TinyLm,
    tokenizer: Tokenizer,
}

impl ModelProvider {
    pub fn new(model: TinyLm, tokenizer: Tokenizer) -> Self {
        Self { model, tokenizer }
    }
}

impl EmbeddingProvider for ModelProvider {
    fn dim(&self) -> usize {
        self.model.config.d_model
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Model
    }

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let tokens = self.tokenizer.encode(text);
        Ok(self.model.embed_sequence(&tokens)?)
    }
}

/// Environment variable holding the bearer token for remote calls.
pub const API_KEY_ENV: &str = "TERMFORGE_API_KEY";

/// Counting semaphore bounding in-flight remote requests.
struct Gate {
    slots: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            slots: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.cv.wait(slots).unwrap();
        }
        *slots -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.slots.lock().unwrap() += 1;
        self.gate.cv.notify_one();
    }
}

/// Remote HTTP provider speaking the embedding wire format:
/// `POST {"input": text, "model": name}` → `{"data":[{"embedding":[..]}]}`.
/// Retries transient failures with exponential backoff.
pub struct RemoteProvider {
    endpoint: String,
    model_name: String,
    dim: usize,
    max_retries: u32,
    backoff_base: Duration,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteProvider {
    pub fn new(endpoint: &str, model_name: &str, dim: usize) -> Self {
        Self::with_limits(endpoint, model_name, dim, 3, Duration::from_millis(100), 8)
    }

    pub fn with_limits(
        endpoint: &str,
        model_name: &str,
        dim: usize,
        max_retries: u32,
        backoff_base: Duration,
        max_in_flight: usize,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .new_agent();
        Self {
            endpoint: endpoint.to_string(),
            model_name: model_name.to_string(),
            dim,
            max_retries,
            backoff_base,
            agent,
            gate: Gate::new(max_in_flight),
        }
    }

    fn request_once(&self, text: &str) -> Result<Vector, EmbedError> {
        let key = std::env::var(API_KEY_ENV).unwrap_or_default();
        let body = serde_json::json!({ "input": text, "model": self.model_name });
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&body)
            .map_err(|e| EmbedError::Http {
                attempts: 1,
                message: e.to_string(),
            })?;
        let parsed: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Schema(e.to_string()))?;
        let values = parsed
            .get("data")
            .and_then(|d| d.get(0))
            .and_then(|d| d.get("embedding"))
            .and_then(|e| e.as_array())
            .ok_or_else(|| EmbedError::Schema("missing data[0].embedding".to_string()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| EmbedError::Schema("non-numeric embedding entry".to_string())))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != self.dim {
            return Err(EmbedError::RemoteDim {
                got: values.len(),
                expected: self.dim,
            });
        }
        Vector::new(values)
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Remote
    }

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let _slot = self.gate.acquire();
        let mut last = None;
        for attempt in 0..=self.max_retries {
            match self.request_once(text) {
                Ok(v) => return Ok(v),
                Err(e @ (EmbedError::Schema(_) | EmbedError::RemoteDim { .. })) => return Err(e),
                Err(e) => last = Some((attempt + 1, e)),
            }
            if attempt < self.max_retries {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt));
            }
        }
        let (attempts, err) = last.expect("at least one attempt");
        match err {
            EmbedError::Http { message, .. } => Err(EmbedError::Http { attempts, message }),
            other => Err(other),
        }
    }
}

/// Optional in-memory memo keyed by text, wrapping any provider.
pub struct MemoProvider<P: EmbeddingProvider> {
    inner: P,
    cache: RwLock<HashMap<String, Vector>>,
}

impl<P: EmbeddingProvider> MemoProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for MemoProvider<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn kind(&self) -> ProviderKind {
        self.inner.kind()
    }

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        if let Some(hit) = self.cache.read().unwrap().get(text) {
            return Ok(hit.clone());
        }
        let v = self.inner.embed(text)?;
        self.cache
            .write()
            .unwrap()
            .insert(text.to_string(), v.clone());
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> Vector {
        Vector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_of_self_is_one() {
        let u = v(&[0.3, -1.2, 4.0]);
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn cosine_known_value() {
        let got = cosine(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((got - 0.7071067811865475).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_mismatch_and_zero() {
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(EmbedError::DimMismatch(1, 2))
        ));
        assert!(matches!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(EmbedError::ZeroNorm)
        ));
    }

    #[test]
    fn hashing_is_deterministic_and_unit_norm() {
        let a = embed_hashing("the board secretary", 256, 7).unwrap();
        let b = embed_hashing("the board secretary", 256, 7).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hashing_disjoint_ngrams_are_orthogonal() {
        // Disjoint alphabets give disjoint n-gram sets; verify the buckets do
        // not collide by brute-force enumeration, then the cosine must be 0.
        let (ta, tb) = ("aaaa", "bbbb");
        let dim = 256;
        let seed = 3;
        let buckets = |t: &str| -> std::collections::HashSet<usize> {
            let chars: Vec<char> = t.chars().collect();
            let mut set = std::collections::HashSet::new();
            for n in 2..=4usize {
                for w in chars.windows(n) {
                    let s: String = w.iter().collect();
                    set.insert((fnv1a(seed, s.as_bytes()) >> 1) as usize % dim);
                }
            }
            set
        };
        assert!(buckets(ta).is_disjoint(&buckets(tb)), "pick texts without bucket collisions");
        let a = embed_hashing(ta, dim, seed).unwrap();
        let b = embed_hashing(tb, dim, seed).unwrap();
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn hashing_single_char_text_still_embeds() {
        let a = embed_hashing("x", 64, 0).unwrap();
        assert_eq!(a.dim(), 64);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn memo_provider_returns_identical_vectors() {
        let p = MemoProvider::new(HashingProvider::new(64, 1));
        let a = p.embed("supervisor").unwrap();
        let b = p.embed("supervisor").unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn cosine_symmetry(a in proptest::collection::vec(-5.0f64..5.0, 3), b in proptest::collection::vec(-5.0f64..5.0, 3)) {
            prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
            let (u, w) = (v(&a), v(&b));
            prop_assert!((cosine(&u, &w).unwrap() - cosine(&w, &u).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn cosine_scale_invariance(a in proptest::collection::vec(-5.0f64..5.0, 4), b in proptest::collection::vec(-5.0f64..5.0, 4), alpha in 0.01f64..100.0) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-6) && b.iter().any(|x| x.abs() > 1e-6));
            let scaled: Vec<f64> = a.iter().map(|x| x * alpha).collect();
            let base = cosine(&v(&a), &v(&b)).unwrap();
            let got = cosine(&v(&scaled), &v(&b)).unwrap();
            prop_assert!((base - got).abs() < 1e-12);
        }

        #[test]
        fn hashing_self_cosine_is_exactly_one(text in "[a-z ]{1,30}") {
            let e = embed_hashing(&text, 128, 5).unwrap();
            prop_assert_eq!(cosine(&e, &e).unwrap(), 1.0);
        }
    }
}
