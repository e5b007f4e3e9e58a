//! Hashed TF-IDF features for short, noisy texts.
//!
//! Word n-grams and boundary-padded character n-grams are hashed with a seeded
//! 64-bit hash into `dimension` buckets. The top hash bit picks a ±1 sign so
//! that colliding grams tend to cancel rather than pile up.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::corpus::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VectorizerConfig {
    pub dimension: usize,
    pub word_ngrams: Vec<usize>,
    pub char_ngrams: Vec<usize>,
    pub hash_seed: u64,
    pub lowercase: bool,
    pub sublinear_tf: bool,
}

impl Default for VectorizerConfig {
    fn default() -> Self {
        Self::with_dimension(1 << 18)
    }
}

impl VectorizerConfig {
    pub const TEACHER_DIMENSION: usize = 1 << 18;
    pub const STUDENT_DIMENSION: usize = 1 << 14;

    pub fn with_dimension(dimension: usize) -> Self {
        Self {
            dimension,
            word_ngrams: vec![1, 2],
            char_ngrams: vec![3, 4],
            hash_seed: 0,
            lowercase: true,
            sublinear_tf: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 || !self.dimension.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "vectorizer dimension must be a power of two >= 2, got {}",
                self.dimension
            )));
        }
        if self.dimension > u32::MAX as usize {
            return Err(Error::InvalidConfig(
                "vectorizer dimension too large".into(),
            ));
        }
        if self.word_ngrams.is_empty() && self.char_ngrams.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one n-gram order is required".into(),
            ));
        }
        if self
            .word_ngrams
            .iter()
            .chain(&self.char_ngrams)
            .any(|&n| n == 0)
        {
            return Err(Error::InvalidConfig(
                "n-gram orders must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a vector from `(index, value)` pairs; indices must be strictly
    /// increasing and values nonzero and finite.
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::LengthMismatch {
                left: indices.len(),
                right: values.len(),
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "sparse indices must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v == 0.0) {
            return Err(Error::NonFinite(
                "sparse values must be finite and nonzero".into(),
            ));
        }
        Ok(Self { indices, values })
    }

    pub fn basis(index: u32) -> Self {
        Self {
            indices: vec![index],
            values: vec![1.0],
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn from_map(map: BTreeMap<u32, f64>) -> Self {
        let (indices, values) = map.into_iter().filter(|(_, v)| *v != 0.0).unzip();
        Self { indices, values }
    }
}

/// Splits on any non-alphanumeric character. Digits are kept.
pub fn tokenize(text: &str, config: &VectorizerConfig) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            if config.lowercase {
                t.to_lowercase()
            } else {
                t.to_owned()
            }
        })
        .collect()
}

/// Every gram the vectorizer hashes for `tokens`, namespaced so that a word
/// and an identical character gram land in different buckets.
pub fn grams(tokens: &[String], config: &VectorizerConfig) -> Vec<String> {
    let mut out = Vec::new();
    for &n in &config.word_ngrams {
        for window in tokens.windows(n) {
            out.push(format!("w:{}", window.join(" ")));
        }
    }
    for &n in &config.char_ngrams {
        for tok in tokens {
            let padded: Vec<char> = std::iter::once('<')
                .chain(tok.chars())
                .chain(std::iter::once('>'))
                .collect();
            for window in padded.windows(n) {
                let mut g = String::with_capacity(2 + 4 * n);
                g.push_str("c:");
                g.extend(window);
                out.push(g);
            }
        }
    }
    out
}

/// Bucket and sign of one gram.
pub fn hash_gram(gram: &str, config: &VectorizerConfig) -> (u32, f64) {
    let h = xxh64(gram.as_bytes(), config.hash_seed);
    let bucket = (h & (config.dimension as u64 - 1)) as u32;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

/// Signed bucket sums over all grams; buckets that cancel to zero are dropped.
pub fn hash_features(tokens: &[String], config: &VectorizerConfig) -> SparseVector {
    let mut acc = BTreeMap::new();
    for g in grams(tokens, config) {
        let (bucket, sign) = hash_gram(&g, config);
        *acc.entry(bucket).or_insert(0.0) += sign;
    }
    SparseVector::from_map(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    dimension: usize,
    doc_count: u64,
    weights: Vec<f64>,
}

impl IdfTable {
    /// Table fitted on zero documents: every weight is `ln(1) + 1 = 1`.
    pub fn unfitted(dimension: usize) -> Self {
        Self {
            dimension,
            doc_count: 0,
            weights: vec![1.0; dimension],
        }
    }

    pub fn from_parts(dimension: usize, doc_count: u64, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != dimension {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                found: weights.len(),
            });
        }
        Ok(Self {
            dimension,
            doc_count,
            weights,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, feature: usize) -> f64 {
        self.weights[feature]
    }
}

/// Smoothed idf `ln((1 + N) / (1 + df)) + 1` over hashed buckets.
pub fn fit_idf<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    config: &VectorizerConfig,
) -> Result<IdfTable> {
    config.validate()?;
    let mut df = vec![0u64; config.dimension];
    let mut n = 0u64;
    for text in texts {
        n += 1;
        let v = hash_features(&tokenize(text, config), config);
        for &i in v.indices() {
            df[i as usize] += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidDataset(
            "cannot fit idf on zero documents".into(),
        ));
    }
    let weights = df
        .into_iter()
        .map(|d| ((1.0 + n as f64) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    Ok(IdfTable {
        dimension: config.dimension,
        doc_count: n,
        weights,
    })
}

pub fn fit_idf_dataset(dataset: &Dataset, config: &VectorizerConfig) -> Result<IdfTable> {
    fit_idf(dataset.texts(), config)
}

/// Sublinear (or raw) tf on bucket magnitudes, sign kept, times idf, then
/// L2-normalized.
pub fn transform(text: &str, config: &VectorizerConfig, idf: &IdfTable) -> Result<SparseVector> {
    if idf.dimension() != config.dimension {
        return Err(Error::DimensionMismatch {
            expected: config.dimension,
            found: idf.dimension(),
        });
    }
    let raw = hash_features(&tokenize(text, config), config);
    let mut values: Vec<f64> = raw
        .iter()
        .map(|(i, c)| {
            let mag = c.abs();
            let tf = if config.sublinear_tf {
                1.0 + mag.ln()
            } else {
                mag
            };
            c.signum() * tf * idf.weight(i)
        })
        .collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    Ok(SparseVector {
        indices: raw.indices,
        values,
    })
}

/// A vectorizer config bound to its fitted idf table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vectorizer {
    pub config: VectorizerConfig,
    pub idf: IdfTable,
}

impl Vectorizer {
    pub fn fit<'a>(
        config: VectorizerConfig,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let idf = fit_idf(texts, &config)?;
        Ok(Self { config, idf })
    }

    pub fn unfitted(config: VectorizerConfig) -> Result<Self> {
        config.validate()?;
        let idf = IdfTable::unfitted(config.dimension);
        Ok(Self { config, idf })
    }

    pub fn dimension(&self) -> usize {
        self.config.dimension
    }

    pub fn transform(&self, text: &str) -> Result<SparseVector> {
        transform(text, &self.config, &self.idf)
    }

    pub fn transform_all<'a>(
        &self,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<Vec<SparseVector>> {
        use rayon::prelude::*;
        let texts: Vec<&str> = texts.into_iter().collect();
        texts.par_iter().map(|t| self.transform(t)).collect()
    }
}
