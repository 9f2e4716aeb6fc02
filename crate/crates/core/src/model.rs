//! Trained models, the training entry point for every family, and the
//! `ITK-MODEL` binary container.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! magic        9 bytes   "ITK-MODEL"
//! version      u32       FORMAT_VERSION
//! header_len   u64
//! header       JSON      model kind, normalization config, model spec, vocabularies
//! n_tensors    u32
//! tensor*      u32 name_len, name (UTF-8), u8 dtype (0 f32, 1 f64, 2 u32),
//!              u64 count, count values
//! checksum     32 bytes  SHA-256 of every preceding byte
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{tokenize, Vocabulary};
use crate::linear::{FastTextConfig, FastTextModel, LogRegModel, Prediction, TrainConfig, TrainLog, N_CLASSES};
use crate::normalize::{clean_fields, CleanRecord, IssueText, NormalizationConfig};
use crate::transformer::{
    train_classifier, EncoderWeights, Precision, TokenVocab, TransformerClassifier, TransformerConfig, Weights,
};

pub const MAGIC: &[u8; 9] = b"ITK-MODEL";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logreg,
    Fasttext,
    Transformer,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Logreg => "logreg",
            ModelKind::Fasttext => "fasttext",
            ModelKind::Transformer => "transformer",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logreg" | "lr" => Ok(ModelKind::Logreg),
            "fasttext" => Ok(ModelKind::Fasttext),
            "transformer" => Ok(ModelKind::Transformer),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?} (expected logreg, fasttext or transformer)"
            ))),
        }
    }
}

/// Vocabulary settings for the TF-IDF features of logistic regression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfidfConfig {
    pub min_df: usize,
    pub max_terms: usize,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig {
            min_df: Vocabulary::DEFAULT_MIN_DF,
            max_terms: Vocabulary::DEFAULT_MAX_TERMS,
        }
    }
}

/// Everything needed to train one model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Logreg { tfidf: TfidfConfig, train: TrainConfig },
    Fasttext { fasttext: FastTextConfig, train: TrainConfig },
    Transformer { transformer: TransformerConfig, seed: u64 },
}

impl ModelSpec {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Logreg => ModelSpec::Logreg {
                tfidf: TfidfConfig::default(),
                train: TrainConfig::logreg_default(),
            },
            ModelKind::Fasttext => ModelSpec::Fasttext {
                fasttext: FastTextConfig::default(),
                train: TrainConfig::fasttext_default(),
            },
            ModelKind::Transformer => ModelSpec::Transformer {
                transformer: TransformerConfig::default(),
                seed: 42,
            },
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Logreg { .. } => ModelKind::Logreg,
            ModelSpec::Fasttext { .. } => ModelKind::Fasttext,
            ModelSpec::Transformer { .. } => ModelKind::Transformer,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelSpec::Logreg { train, .. } | ModelSpec::Fasttext { train, .. } => train.seed,
            ModelSpec::Transformer { seed, .. } => *seed,
        }
    }

    pub fn set_seed(&mut self, new: u64) {
        match self {
            ModelSpec::Logreg { train, .. } | ModelSpec::Fasttext { train, .. } => train.seed = new,
            ModelSpec::Transformer { seed, .. } => *seed = new,
        }
    }

    pub fn set_epochs(&mut self, epochs: usize) {
        match self {
            ModelSpec::Logreg { train, .. } | ModelSpec::Fasttext { train, .. } => train.epochs = epochs,
            ModelSpec::Transformer { transformer, .. } => transformer.epochs = epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Logreg { vocab: Vocabulary, model: LogRegModel },
    Fasttext(FastTextModel),
    Transformer(TransformerClassifier),
}

/// A trained classifier plus the cleaning configuration it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub normalization: NormalizationConfig,
    pub spec: ModelSpec,
    pub classifier: Classifier,
}

/// Trains the family described by `spec` on cleaned records.
pub fn train_model(
    records: &[CleanRecord],
    spec: &ModelSpec,
    normalization: &NormalizationConfig,
) -> Result<(TrainedModel, TrainLog)> {
    normalization.validate()?;
    let (classifier, log) = match spec {
        ModelSpec::Logreg { tfidf, train } => {
            let vocab = Vocabulary::fit(records.iter().map(|r| r.text.as_str()), tfidf.min_df, tfidf.max_terms)?;
            let data: Vec<_> = records
                .iter()
                .map(|r| (vocab.tfidf_transform(&tokenize(&r.text)), r.label_code))
                .collect();
            let (model, log) = LogRegModel::train(&data, vocab.len(), train)?;
            (Classifier::Logreg { vocab, model }, log)
        }
        ModelSpec::Fasttext { fasttext, train } => {
            fasttext.validate()?;
            let data: Vec<_> = records
                .iter()
                .map(|r| (fasttext.extractor.hash_ngrams(&tokenize(&r.text)), r.label_code))
                .collect();
            let (model, log) = FastTextModel::train(&data, fasttext.clone(), train)?;
            (Classifier::Fasttext(model), log)
        }
        ModelSpec::Transformer { transformer, seed } => {
            let (model, log) = train_classifier(records, transformer, *seed)?;
            (Classifier::Transformer(model), log)
        }
    };
    Ok((
        TrainedModel {
            normalization: normalization.clone(),
            spec: spec.clone(),
            classifier,
        },
        log,
    ))
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    /// Prediction for already-cleaned text.
    pub fn predict_clean(&self, text: &str) -> Result<Prediction> {
        match &self.classifier {
            Classifier::Logreg { vocab, model } => Ok(model.predict(&vocab.tfidf_transform(&tokenize(text)))),
            Classifier::Fasttext(m) => Ok(m.predict(&tokenize(text))),
            Classifier::Transformer(m) => m.predict(text),
        }
    }

    /// Cleans the raw fields with the stored configuration, then predicts.
    pub fn predict_text(&self, issue: &IssueText) -> Result<Prediction> {
        self.predict_clean(&clean_fields(issue, &self.normalization))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = Header {
            format_version: FORMAT_VERSION,
            model_kind: self.kind(),
            normalization: self.normalization.clone(),
            spec: self.spec.clone(),
            vocabulary: None,
            token_vocab: None,
            n_features: None,
        };
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        match &self.classifier {
            Classifier::Logreg { vocab, model } => {
                header.vocabulary = Some(vocab.clone());
                header.n_features = Some(model.n_features);
                tensors.push(("weights".into(), Tensor::F64(model.weights.clone())));
                tensors.push(("bias".into(), Tensor::F64(model.bias.to_vec())));
            }
            Classifier::Fasttext(m) => {
                let rows = m.stored_rows();
                tensors.push(("buckets".into(), Tensor::U32(rows.iter().map(|(b, _)| *b).collect())));
                tensors.push((
                    "embeddings".into(),
                    Tensor::F64(rows.iter().flat_map(|(_, r)| r.iter().copied()).collect()),
                ));
                tensors.push(("output".into(), Tensor::F64(m.output.clone())));
                tensors.push(("bias".into(), Tensor::F64(m.bias.to_vec())));
                tensors.push(("class_prior".into(), Tensor::F64(m.class_prior.to_vec())));
            }
            Classifier::Transformer(m) => {
                header.token_vocab = Some(m.vocab.clone());
                match &m.weights {
                    Weights::Single(w) => {
                        for (name, span, _) in &w.layout.named {
                            tensors.push((name.clone(), Tensor::F32(w.get(*span).to_vec())));
                        }
                    }
                    Weights::Double(w) => {
                        for (name, span, _) in &w.layout.named {
                            tensors.push((name.clone(), Tensor::F64(w.get(*span).to_vec())));
                        }
                    }
                }
            }
        }

        let header_json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            t.write(&mut out);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let min = MAGIC.len() + 4;
        if bytes.len() < min || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Integrity("not an ITK-MODEL file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[MAGIC.len()..min].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < min + CHECKSUM_LEN {
            return Err(Error::Integrity("model file is truncated".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(Error::Integrity("checksum mismatch (truncated or corrupted model file)".into()));
        }

        let mut r = Reader { buf: body, pos: min };
        let header_len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        if header.model_kind != header.spec.kind() {
            return Err(Error::Integrity("header model_kind disagrees with its spec".into()));
        }
        header.normalization.validate()?;
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors.min(1024));
        for _ in 0..n_tensors {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Integrity("tensor name is not UTF-8".into()))?
                .to_string();
            tensors.push((name, Tensor::read(&mut r)?));
        }
        if r.pos != body.len() {
            return Err(Error::Integrity("trailing bytes after the last tensor".into()));
        }
        let mut tensors = Tensors(tensors);

        let classifier = match &header.spec {
            ModelSpec::Logreg { .. } => {
                let vocab = header
                    .vocabulary
                    .ok_or_else(|| Error::Integrity("logreg model without vocabulary".into()))?;
                let n_features = header.n_features.unwrap_or(vocab.len());
                let weights = tensors.f64("weights", Some(N_CLASSES * n_features))?;
                let bias = tensors.f64("bias", Some(N_CLASSES))?;
                let model = LogRegModel {
                    n_features,
                    weights,
                    bias: bias.try_into().unwrap(),
                };
                model.check_finite()?;
                Classifier::Logreg { vocab, model }
            }
            ModelSpec::Fasttext { fasttext, train } => {
                let mut m = FastTextModel::new(fasttext.clone(), train.seed)?;
                let dim = m.dim();
                let buckets = tensors.u32("buckets")?;
                let emb = tensors.f64("embeddings", Some(buckets.len() * dim))?;
                for (b, row) in buckets.iter().zip(emb.chunks(dim)) {
                    m.set_row(*b, row)?;
                }
                m.output = tensors.f64("output", Some(N_CLASSES * dim))?;
                m.bias = tensors.f64("bias", Some(N_CLASSES))?.try_into().unwrap();
                m.class_prior = tensors.f64("class_prior", Some(N_CLASSES))?.try_into().unwrap();
                m.check_finite()?;
                Classifier::Fasttext(m)
            }
            ModelSpec::Transformer { transformer, .. } => {
                let vocab = header
                    .token_vocab
                    .ok_or_else(|| Error::Integrity("transformer model without vocabulary".into()))?;
                let layout = crate::transformer::Layout::new(transformer, vocab.n_tokens());
                let weights = match transformer.precision {
                    Precision::Single => {
                        let mut params = Vec::with_capacity(layout.total);
                        for (name, span, _) in &layout.named {
                            params.extend(tensors.f32(name, span.len())?);
                        }
                        Weights::Single(EncoderWeights::from_params(transformer, vocab.n_tokens(), params)?)
                    }
                    Precision::Double => {
                        let mut params = Vec::with_capacity(layout.total);
                        for (name, span, _) in &layout.named {
                            params.extend(tensors.f64(name, Some(span.len()))?);
                        }
                        Weights::Double(EncoderWeights::from_params(transformer, vocab.n_tokens(), params)?)
                    }
                };
                if !weights.all_finite() {
                    return Err(Error::Integrity("transformer weights are not finite".into()));
                }
                Classifier::Transformer(TransformerClassifier {
                    config: transformer.clone(),
                    vocab,
                    weights,
                })
            }
        };
        if let Some((name, _)) = tensors.0.first() {
            return Err(Error::Integrity(format!("unexpected tensor {name:?}")));
        }
        Ok(TrainedModel {
            normalization: header.normalization,
            spec: header.spec,
            classifier,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    model_kind: ModelKind,
    normalization: NormalizationConfig,
    spec: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocabulary: Option<Vocabulary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token_vocab: Option<TokenVocab>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_features: Option<usize>,
}

enum Tensor {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl Tensor {
    fn write(&self, out: &mut Vec<u8>) {
        match self {
            Tensor::F32(v) => {
                out.push(0);
                out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
            Tensor::F64(v) => {
                out.push(1);
                out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
            Tensor::U32(v) => {
                out.push(2);
                out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let dtype = r.take(1)?[0];
        let count = r.u64()? as usize;
        let width = match dtype {
            0 | 2 => 4,
            1 => 8,
            other => return Err(Error::Integrity(format!("unknown tensor dtype {other}"))),
        };
        let bytes = r.take(count.checked_mul(width).ok_or_else(|| Error::Integrity("tensor too large".into()))?)?;
        Ok(match dtype {
            0 => Tensor::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            1 => Tensor::F64(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            _ => Tensor::U32(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()),
        })
    }
}

struct Tensors(Vec<(String, Tensor)>);

impl Tensors {
    fn remove(&mut self, name: &str) -> Result<Tensor> {
        let i = self
            .0
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Integrity(format!("missing tensor {name:?}")))?;
        Ok(self.0.remove(i).1)
    }

    fn f64(&mut self, name: &str, len: Option<usize>) -> Result<Vec<f64>> {
        match self.remove(name)? {
            Tensor::F64(v) if len.is_none_or(|l| l == v.len()) => Ok(v),
            _ => Err(Error::Integrity(format!("tensor {name:?} has the wrong dtype or length"))),
        }
    }

    fn f32(&mut self, name: &str, len: usize) -> Result<Vec<f32>> {
        match self.remove(name)? {
            Tensor::F32(v) if v.len() == len => Ok(v),
            _ => Err(Error::Integrity(format!("tensor {name:?} has the wrong dtype or length"))),
        }
    }

    fn u32(&mut self, name: &str) -> Result<Vec<u32>> {
        match self.remove(name)? {
            Tensor::U32(v) => Ok(v),
            _ => Err(Error::Integrity(format!("tensor {name:?} has the wrong dtype"))),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Integrity("model file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<CleanRecord> {
        let texts = [
            ("app crash on start", 0u8),
            ("crash when saving file", 0),
            ("error crash in parser", 0),
            ("add dark mode feature", 1),
            ("feature request export csv", 1),
            ("please add feature toggle", 1),
            ("how do i configure this", 2),
            ("how to install on windows", 2),
            ("question how to use api", 2),
        ];
        texts
            .iter()
            .map(|(t, l)| CleanRecord {
                text: t.to_string(),
                label_code: *l,
            })
            .collect()
    }

    fn small_spec(kind: ModelKind) -> ModelSpec {
        match ModelSpec::default_for(kind) {
            ModelSpec::Logreg { train, .. } => ModelSpec::Logreg {
                tfidf: TfidfConfig {
                    min_df: 1,
                    max_terms: 1000,
                },
                train,
            },
            ModelSpec::Fasttext { train, .. } => ModelSpec::Fasttext {
                fasttext: FastTextConfig {
                    dim: 8,
                    extractor: crate::features::HashedNgramExtractor {
                        n_buckets: 1 << 10,
                        ..Default::default()
                    },
                },
                train,
            },
            ModelSpec::Transformer { seed, .. } => ModelSpec::Transformer {
                transformer: TransformerConfig {
                    d_model: 8,
                    n_heads: 2,
                    n_layers: 1,
                    d_ff: 16,
                    max_len: 16,
                    epochs: 1,
                    ..Default::default()
                },
                seed,
            },
        }
    }

    #[test]
    fn round_trip_every_kind() {
        let norm = NormalizationConfig::default();
        for kind in [ModelKind::Logreg, ModelKind::Fasttext, ModelKind::Transformer] {
            let (m, _) = train_model(&records(), &small_spec(kind), &norm).unwrap();
            let bytes = m.to_bytes().unwrap();
            let back = TrainedModel::from_bytes(&bytes).unwrap();
            assert_eq!(back, m, "{kind}");
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn wrong_version_is_reported() {
        let (m, _) = train_model(&records(), &small_spec(ModelKind::Logreg), &NormalizationConfig::default()).unwrap();
        let mut bytes = m.to_bytes().unwrap();
        bytes[MAGIC.len()..MAGIC.len() + 4].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            TrainedModel::from_bytes(&bytes),
            Err(Error::Version { found: 99, expected: 1 })
        ));
    }

    #[test]
    fn truncation_and_corruption_are_integrity_errors() {
        let (m, _) = train_model(&records(), &small_spec(ModelKind::Fasttext), &NormalizationConfig::default()).unwrap();
        let bytes = m.to_bytes().unwrap();
        for cut in [0, 5, 13, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(TrainedModel::from_bytes(&bytes[..cut]), Err(Error::Integrity(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 1;
        assert!(matches!(TrainedModel::from_bytes(&flipped), Err(Error::Integrity(_))));
    }

    #[test]
    fn model_kind_parses() {
        assert_eq!("transformer".parse::<ModelKind>().unwrap(), ModelKind::Transformer);
        assert_eq!("LogReg".parse::<ModelKind>().unwrap(), ModelKind::Logreg);
        assert!("svm".parse::<ModelKind>().is_err());
    }
}
