//! Response-to-answer similarity: Rouge-2 bigram F1 and embedding cosine.
//!
//! Tokenization is fixed so that scores are reproducible bit-for-bit:
//! text is lowercased, every character that is neither alphanumeric nor
//! whitespace becomes a separator, and the result is split on whitespace.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::transport::{HttpEndpoint, HttpTransport};

/// Dimension of the built-in hashed bag-of-words embedding.
pub const FALLBACK_DIMENSION: usize = 256;

/// Identifier of the built-in offline embedding provider.
pub const FALLBACK_PROVIDER: &str = "fallback";

/// How two texts are compared.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub enum SimilarityMetric {
    #[default]
    Rouge2,
    EmbeddingCosine { provider: String },
}

impl SimilarityMetric {
    pub fn embedding_fallback() -> Self {
        SimilarityMetric::EmbeddingCosine {
            provider: FALLBACK_PROVIDER.to_string(),
        }
    }

    /// Closed range every score of this metric lies in.
    pub fn range(&self) -> (f64, f64) {
        match self {
            SimilarityMetric::Rouge2 => (0.0, 1.0),
            SimilarityMetric::EmbeddingCosine { .. } => (-1.0, 1.0),
        }
    }
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimilarityMetric::Rouge2 => f.write_str("rouge2"),
            SimilarityMetric::EmbeddingCosine { provider } if provider == FALLBACK_PROVIDER => {
                f.write_str("embedding")
            }
            SimilarityMetric::EmbeddingCosine { provider } => write!(f, "embedding:{provider}"),
        }
    }
}

impl FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "rouge2" | "rouge-2" => return Ok(SimilarityMetric::Rouge2),
            "embedding" | "cosine" => return Ok(SimilarityMetric::embedding_fallback()),
            _ => {}
        }
        match s.split_once(':') {
            Some((kind, provider)) if kind.eq_ignore_ascii_case("embedding") && !provider.is_empty() => {
                Ok(SimilarityMetric::EmbeddingCosine {
                    provider: provider.to_string(),
                })
            }
            _ => Err(Error::config(format!(
                "unknown similarity metric `{s}` (expected rouge2, embedding or embedding:<provider>)"
            ))),
        }
    }
}

impl Serialize for SimilarityMetric {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SimilarityMetric {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Normalized token sequence used by Rouge-2 and the fallback embedding.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    normalized.split_whitespace().map(str::to_owned).collect()
}

fn bigram_counts(tokens: &[String]) -> HashMap<(&str, &str), usize> {
    let mut counts = HashMap::new();
    for pair in tokens.windows(2) {
        *counts.entry((pair[0].as_str(), pair[1].as_str())).or_insert(0) += 1;
    }
    counts
}

/// Rouge-2 F1 between a candidate and a reference text.
///
/// Bigram matches are clipped (multiset intersection). When neither side has
/// a bigram the score is 1.0 for equal token sequences and 0.0 otherwise; when
/// only one side lacks bigrams the score is 0.0.
pub fn rouge2(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    let cand_total = cand.len().saturating_sub(1);
    let ref_total = refr.len().saturating_sub(1);

    if cand_total == 0 && ref_total == 0 {
        return if cand == refr { 1.0 } else { 0.0 };
    }
    if cand_total == 0 || ref_total == 0 {
        return 0.0;
    }

    let cand_counts = bigram_counts(&cand);
    let ref_counts = bigram_counts(&refr);
    let overlap: usize = cand_counts
        .iter()
        .map(|(bigram, &n)| n.min(ref_counts.get(bigram).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }

    let precision = overlap as f64 / cand_total as f64;
    let recall = overlap as f64 / ref_total as f64;
    (2.0 * precision * recall / (precision + recall)).clamp(0.0, 1.0)
}

/// A dense text embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding vector has no components"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding vector has non-finite components"));
        }
        Ok(EmbeddingVector(values))
    }

    /// Unit basis vector e_0 of the given dimension.
    pub fn basis(dimension: usize) -> Self {
        let mut values = vec![0.0; dimension.max(1)];
        values[0] = 1.0;
        EmbeddingVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dimension() != v.dimension() {
        return Err(Error::invalid(format!(
            "embedding dimension mismatch: {} vs {}",
            u.dimension(),
            v.dimension()
        )));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero-norm vector"));
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Source of text embeddings.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut batch = self.embed_batch(&[text])?;
        batch
            .pop()
            .ok_or_else(|| Error::Invariant(format!("provider {} returned no embedding", self.id())))
    }
}

/// Offline hashed bag-of-words embedding.
///
/// Each token is hashed with 64-bit FNV-1a into one of `dimension` buckets;
/// the count vector is L2-normalized. Token-free text maps to e_0.
#[derive(Clone, Debug)]
pub struct HashedBagOfWords {
    dimension: usize,
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        HashedBagOfWords {
            dimension: FALLBACK_DIMENSION,
        }
    }
}

impl HashedBagOfWords {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(HashedBagOfWords { dimension })
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dimension as u64) as usize
    }

    fn embed_one(&self, text: &str) -> EmbeddingVector {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return EmbeddingVector::basis(self.dimension);
        }
        let mut values = vec![0.0; self.dimension];
        for token in &tokens {
            values[self.bucket(token)] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        values.iter_mut().for_each(|v| *v /= norm);
        EmbeddingVector(values)
    }
}

impl EmbeddingProvider for HashedBagOfWords {
    fn id(&self) -> &str {
        FALLBACK_PROVIDER
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Embedding provider behind an HTTP endpoint.
///
/// Wire format: `POST {"texts": [..]}` answered by `{"embeddings": [[..], ..]}`.
/// Embeddings are memoized per text for the life of the provider and the
/// first observed dimension is enforced for every later response.
pub struct RemoteEmbeddingProvider {
    id: String,
    transport: HttpTransport,
    memo: Mutex<HashMap<String, EmbeddingVector>>,
    dimension: Mutex<Option<usize>>,
}

impl RemoteEmbeddingProvider {
    pub fn new(id: impl Into<String>, endpoint: HttpEndpoint) -> Result<Self> {
        Ok(RemoteEmbeddingProvider {
            id: id.into(),
            transport: HttpTransport::new(endpoint)?,
            memo: Mutex::new(HashMap::new()),
            dimension: Mutex::new(None),
        })
    }

    fn fetch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let key = format!("embedding:{}:{}", self.id, texts.len());
        let body = self.transport.post_json(&json!({ "texts": texts }), &key)?;
        let rows = body
            .get("embeddings")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Transport {
                key: key.clone(),
                attempts: 1,
                message: "response lacks an `embeddings` array".into(),
            })?;
        if rows.len() != texts.len() {
            return Err(Error::Transport {
                key,
                attempts: 1,
                message: format!("expected {} embeddings, got {}", texts.len(), rows.len()),
            });
        }
        let mut out = Vec::with_capacity(rows.len());
        for row in rows {
            let values: Option<Vec<f64>> = row
                .as_array()
                .map(|xs| xs.iter().map(|x| x.as_f64()).collect())
                .unwrap_or(None);
            let values = values.ok_or_else(|| Error::Transport {
                key: key.clone(),
                attempts: 1,
                message: "embedding row is not a numeric array".into(),
            })?;
            let vector = EmbeddingVector::new(values)?;
            self.check_dimension(vector.dimension())?;
            out.push(vector);
        }
        Ok(out)
    }

    fn check_dimension(&self, dimension: usize) -> Result<()> {
        let mut known = self.dimension.lock().expect("dimension lock poisoned");
        match *known {
            None => {
                *known = Some(dimension);
                Ok(())
            }
            Some(d) if d == dimension => Ok(()),
            Some(d) => Err(Error::Invariant(format!(
                "provider {} changed embedding dimension from {d} to {dimension}",
                self.id
            ))),
        }
    }
}

impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let missing: Vec<&str> = {
            let memo = self.memo.lock().expect("memo lock poisoned");
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .copied()
                .filter(|t| !t.is_empty() && !memo.contains_key(*t) && seen.insert(*t))
                .collect()
        };
        if !missing.is_empty() {
            let fetched = self.fetch(&missing)?;
            let mut memo = self.memo.lock().expect("memo lock poisoned");
            for (text, vector) in missing.into_iter().zip(fetched) {
                memo.insert(text.to_string(), vector);
            }
        }
        let memo = self.memo.lock().expect("memo lock poisoned");
        let dimension = self
            .dimension
            .lock()
            .expect("dimension lock poisoned")
            .unwrap_or(1);
        Ok(texts
            .iter()
            .map(|t| {
                if t.is_empty() {
                    EmbeddingVector::basis(dimension)
                } else {
                    memo[*t].clone()
                }
            })
            .collect())
    }
}

/// Scores text pairs under any [`SimilarityMetric`].
///
/// Holds the registered embedding providers; the offline fallback is always
/// present under the id `fallback`.
#[derive(Clone)]
pub struct Scorer {
    providers: HashMap<String, Arc<dyn EmbeddingProvider>>,
}

impl Default for Scorer {
    fn default() -> Self {
        let mut providers: HashMap<String, Arc<dyn EmbeddingProvider>> = HashMap::new();
        providers.insert(FALLBACK_PROVIDER.into(), Arc::new(HashedBagOfWords::default()));
        Scorer { providers }
    }
}

impl fmt::Debug for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<_> = self.providers.keys().collect();
        ids.sort();
        f.debug_struct("Scorer").field("providers", &ids).finish()
    }
}

impl Scorer {
    pub fn register(&mut self, provider: Arc<dyn EmbeddingProvider>) {
        self.providers.insert(provider.id().to_string(), provider);
    }

    pub fn provider(&self, id: &str) -> Result<&Arc<dyn EmbeddingProvider>> {
        self.providers
            .get(id)
            .ok_or_else(|| Error::config(format!("embedding provider `{id}` is not registered")))
    }

    /// Fails if the metric names an unregistered provider.
    pub fn validate(&self, metric: &SimilarityMetric) -> Result<()> {
        if let SimilarityMetric::EmbeddingCosine { provider } = metric {
            self.provider(provider)?;
        }
        Ok(())
    }

    pub fn embed(&self, text: &str, provider: &str) -> Result<EmbeddingVector> {
        self.provider(provider)?.embed(text)
    }

    pub fn score(&self, metric: &SimilarityMetric, a: &str, b: &str) -> Result<f64> {
        match metric {
            SimilarityMetric::Rouge2 => Ok(rouge2(a, b)),
            SimilarityMetric::EmbeddingCosine { provider } => {
                let vectors = self.provider(provider)?.embed_batch(&[a, b])?;
                cosine_similarity(&vectors[0], &vectors[1])
            }
        }
    }

    /// Scores each response against the answer at the same index.
    pub fn score_pairs(
        &self,
        metric: &SimilarityMetric,
        responses: &[String],
        answers: &[&str],
    ) -> Result<Vec<f64>> {
        if responses.len() != answers.len() {
            return Err(Error::invalid(format!(
                "{} responses for {} answers",
                responses.len(),
                answers.len()
            )));
        }
        match metric {
            SimilarityMetric::Rouge2 => Ok(responses
                .iter()
                .zip(answers)
                .map(|(r, a)| rouge2(r, a))
                .collect()),
            SimilarityMetric::EmbeddingCosine { provider } => {
                let provider = self.provider(provider)?;
                let texts: Vec<&str> = responses
                    .iter()
                    .map(String::as_str)
                    .chain(answers.iter().copied())
                    .collect();
                let vectors = provider.embed_batch(&texts)?;
                let (resp, ans) = vectors.split_at(responses.len());
                resp.iter()
                    .zip(ans)
                    .map(|(u, v)| cosine_similarity(u, v))
                    .collect()
            }
        }
    }

    /// Mean similarity over all k(k-1)/2 unordered response pairs.
    pub fn pairwise_mean_similarity(
        &self,
        responses: &[String],
        metric: &SimilarityMetric,
    ) -> Result<f64> {
        match metric {
            SimilarityMetric::Rouge2 => pairwise_mean_with(responses, |a, b| Ok(rouge2(a, b))),
            SimilarityMetric::EmbeddingCosine { provider } => {
                let texts: Vec<&str> = responses.iter().map(String::as_str).collect();
                let vectors = self.provider(provider)?.embed_batch(&texts)?;
                let mut index = HashMap::new();
                for (t, v) in texts.iter().zip(&vectors) {
                    index.entry(*t).or_insert(v);
                }
                pairwise_mean_with(responses, |a, b| cosine_similarity(index[a], index[b]))
            }
        }
    }
}

/// Mean of `sim` over every unordered pair `(i, j)`, `i < j`.
pub fn pairwise_mean_with<F>(responses: &[String], mut sim: F) -> Result<f64>
where
    F: FnMut(&str, &str) -> Result<f64>,
{
    let k = responses.len();
    if k < 2 {
        return Err(Error::invalid(format!(
            "pairwise similarity needs at least 2 responses, got {k}"
        )));
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            total += sim(&responses[i], &responses[j])?;
        }
    }
    Ok(total / (k * (k - 1) / 2) as f64)
}
