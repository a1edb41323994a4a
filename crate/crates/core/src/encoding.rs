//! Text to vector encoding.
//!
//! The default [`HashedNGramEncoder`] is a dependency-free, deterministic
//! stand-in for a pretrained sentence encoder. [`RemoteEncoder`] talks to an
//! embedding service over HTTP.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::Scalar;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding service failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("embedding service protocol error: {0}")]
    Protocol(String),
}

/// Fixed-length embedding; unit L2 norm unless it is the zero vector.
/// Cloning shares the underlying buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector<T> {
    values: Arc<[T]>,
}

impl<T: Scalar> EmbeddingVector<T> {
    /// Wraps raw values without normalizing.
    pub fn from_raw(values: Vec<T>) -> Self {
        EmbeddingVector {
            values: values.into(),
        }
    }

    /// Scales `values` to unit length; all-zero input stays zero.
    pub fn normalized(mut values: Vec<T>) -> Self {
        let norm = values.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if norm > T::zero() {
            values.iter_mut().for_each(|v| *v = *v / norm);
        }
        Self::from_raw(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_raw(vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == T::zero())
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector::from_raw(self.values.iter().map(|v| U::of(v.as_f64())).collect())
    }
}

impl<T: Serialize> Serialize for EmbeddingVector<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.values.serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for EmbeddingVector<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Self::from_raw(Vec::<T>::deserialize(d)?))
    }
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T, EncodeError> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub fn cosine_slices<T: Scalar>(a: &[T], b: &[T]) -> Result<T, EncodeError> {
    if a.len() != b.len() {
        return Err(EncodeError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (T::zero(), T::zero(), T::zero());
    for (x, y) in a.iter().zip(b) {
        dot = dot + *x * *y;
        na = na + *x * *x;
        nb = nb + *y * *y;
    }
    if na == T::zero() || nb == T::zero() {
        return Ok(T::zero());
    }
    let c = dot / (na.sqrt() * nb.sqrt());
    Ok(c.max(-T::one()).min(T::one()))
}

pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    fn encode(&self, text: &str) -> Result<EmbeddingVector<f64>, EncodeError>;

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<f64>>, EncodeError> {
        texts.iter().map(|t| self.encode(t)).collect()
    }
}

/// Case-folded character n-gram term frequencies hashed into `dim` buckets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedNGramEncoder {
    pub dim: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub seed: u64,
}

impl Default for HashedNGramEncoder {
    fn default() -> Self {
        HashedNGramEncoder {
            dim: 256,
            min_n: 3,
            max_n: 5,
            seed: 0,
        }
    }
}

impl HashedNGramEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashedNGramEncoder {
            dim,
            seed,
            ..Default::default()
        }
    }

    fn bucket(&self, gram: &[char]) -> usize {
        // FNV-1a over UTF-8 bytes, seeded offset, splitmix64 finalizer
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut buf = [0u8; 4];
        for c in gram {
            for b in c.encode_utf8(&mut buf).bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h ^= h >> 30;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
        (h % self.dim as u64) as usize
    }
}

impl TextEncoder for HashedNGramEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector<f64>, EncodeError> {
        let folded = text.to_lowercase();
        let words: Vec<&str> = folded.split_whitespace().collect();
        if words.is_empty() {
            return Ok(EmbeddingVector::zeros(self.dim));
        }
        let chars: Vec<char> = format!(" {} ", words.join(" ")).chars().collect();
        let mut counts = vec![0.0f64; self.dim];
        for n in self.min_n..=self.max_n {
            if chars.len() < n {
                continue;
            }
            for gram in chars.windows(n) {
                counts[self.bucket(gram)] += 1.0;
            }
        }
        Ok(EmbeddingVector::normalized(counts))
    }
}

/// Embedding service client: `POST {"texts": [...]}` answered by
/// `{"vectors": [[...], ...]}`. Results are cached by exact text.
pub struct RemoteEncoder {
    endpoint: String,
    dim: usize,
    batch_size: usize,
    retries: usize,
    agent: ureq::Agent,
    cache: Mutex<HashMap<String, EmbeddingVector<f64>>>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl RemoteEncoder {
    pub fn new(endpoint: impl Into<String>, dim: usize, timeout: Duration, batch_size: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        RemoteEncoder {
            endpoint: endpoint.into(),
            dim,
            batch_size: batch_size.max(1),
            retries: 3,
            agent,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<f64>>, EncodeError> {
        let mut last = String::new();
        for attempt in 0..self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 << attempt));
            }
            let sent = self
                .agent
                .post(&self.endpoint)
                .send_json(EmbedRequest { texts });
            let mut resp = match sent {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let body: EmbedResponse = resp
                .body_mut()
                .read_json()
                .map_err(|e| EncodeError::Protocol(e.to_string()))?;
            if body.vectors.len() != texts.len() {
                return Err(EncodeError::Protocol(format!(
                    "asked for {} vectors, got {}",
                    texts.len(),
                    body.vectors.len()
                )));
            }
            return body
                .vectors
                .into_iter()
                .map(|v| {
                    if v.len() != self.dim {
                        return Err(EncodeError::DimensionMismatch {
                            left: self.dim,
                            right: v.len(),
                        });
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(EncodeError::Protocol("non-finite vector entry".into()));
                    }
                    Ok(EmbeddingVector::normalized(v))
                })
                .collect();
        }
        Err(EncodeError::Transport {
            attempts: self.retries,
            message: last,
        })
    }
}

impl TextEncoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector<f64>, EncodeError> {
        Ok(self.encode_batch(&[text])?.remove(0))
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<f64>>, EncodeError> {
        let missing: Vec<&str> = {
            let cache = self.cache.lock().expect("cache lock");
            let mut m: Vec<&str> = texts
                .iter()
                .copied()
                .filter(|t| !t.trim().is_empty() && !cache.contains_key(*t))
                .collect();
            m.sort_unstable();
            m.dedup();
            m
        };
        for chunk in missing.chunks(self.batch_size) {
            let vectors = self.request(chunk)?;
            let mut cache = self.cache.lock().expect("cache lock");
            for (t, v) in chunk.iter().zip(vectors) {
                cache.insert((*t).to_owned(), v);
            }
        }
        let cache = self.cache.lock().expect("cache lock");
        Ok(texts
            .iter()
            .map(|t| {
                cache
                    .get(*t)
                    .cloned()
                    .unwrap_or_else(|| EmbeddingVector::zeros(self.dim))
            })
            .collect())
    }
}

/// Encoder selection as it appears in run configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderConfig {
    Hashed {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Remote {
        endpoint: String,
        dim: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
}

fn default_dim() -> usize {
    256
}
fn default_timeout() -> u64 {
    30
}
fn default_batch() -> usize {
    32
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Hashed {
            dim: default_dim(),
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn build(&self) -> Arc<dyn TextEncoder> {
        match self {
            EncoderConfig::Hashed { dim, seed } => Arc::new(HashedNGramEncoder::new(*dim, *seed)),
            EncoderConfig::Remote {
                endpoint,
                dim,
                timeout_secs,
                batch_size,
            } => Arc::new(RemoteEncoder::new(
                endpoint.clone(),
                *dim,
                Duration::from_secs(*timeout_secs),
                *batch_size,
            )),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EncoderConfig::Hashed { dim, .. } | EncoderConfig::Remote { dim, .. } => *dim,
        }
    }
}

/// Memoizing front for an encoder, converting to the working scalar type.
pub struct EncoderCache<T> {
    encoder: Arc<dyn TextEncoder>,
    cache: Mutex<HashMap<String, EmbeddingVector<T>>>,
}

impl<T: Scalar> EncoderCache<T> {
    pub fn new(encoder: Arc<dyn TextEncoder>) -> Self {
        EncoderCache {
            encoder,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn encoder(&self) -> &Arc<dyn TextEncoder> {
        &self.encoder
    }

    pub fn get(&self, text: &str) -> Result<EmbeddingVector<T>, EncodeError> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(text) {
            return Ok(v.clone());
        }
        let v = self.encoder.encode(text)?.cast::<T>();
        self.cache
            .lock()
            .expect("cache lock")
            .insert(text.to_owned(), v.clone());
        Ok(v)
    }

    /// Encodes everything not yet cached in one batch.
    pub fn warm<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<(), EncodeError> {
        let missing: Vec<&str> = {
            let cache = self.cache.lock().expect("cache lock");
            let mut m: Vec<&str> = texts.into_iter().filter(|t| !cache.contains_key(*t)).collect();
            m.sort_unstable();
            m.dedup();
            m
        };
        if missing.is_empty() {
            return Ok(());
        }
        let vectors = self.encoder.encode_batch(&missing)?;
        let mut cache = self.cache.lock().expect("cache lock");
        for (t, v) in missing.into_iter().zip(vectors) {
            cache.insert(t.to_owned(), v.cast::<T>());
        }
        Ok(())
    }
}
