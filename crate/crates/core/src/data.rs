//! Dataset containers, loaders, seeded splitting and synthetic generators.
//!
//! Two sample shapes are supported: dense feature rows ([`TabularDataset`]) and
//! token-id sequences ([`TokenDataset`]). Token id 0 is reserved for padding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved padding token.
pub const PAD_TOKEN: usize = 0;

pub const CIFAR_IMAGE_BYTES: usize = 3072;
pub const CIFAR_RECORD_BYTES: usize = CIFAR_IMAGE_BYTES + 1;
pub const CIFAR_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    class_count: usize,
}

impl TabularDataset {
    /// `features` is row-major `[labels.len() x dim]`.
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Input("dataset has no samples".into()));
        }
        if dim == 0 {
            return Err(Error::Input("feature dimension must be at least 1".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Dimension(format!(
                "{} feature values for {} rows of width {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Input(format!("label {bad} outside 0..{class_count}")));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite feature at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            features,
            dim,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Gathers rows in the given order into a contiguous matrix.
    pub fn gather(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            out.extend_from_slice(self.row(i));
        }
        out
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.gather(indices),
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenDataset {
    sequences: Vec<Vec<usize>>,
    labels: Vec<usize>,
    vocab_size: usize,
    class_count: usize,
}

impl TokenDataset {
    pub fn new(
        sequences: Vec<Vec<usize>>,
        labels: Vec<usize>,
        vocab_size: usize,
        class_count: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Input("dataset has no samples".into()));
        }
        if sequences.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} sequences but {} labels",
                sequences.len(),
                labels.len()
            )));
        }
        if let Some(i) = sequences.iter().position(|s| s.is_empty()) {
            return Err(Error::Input(format!("sequence {i} is empty")));
        }
        if let Some(&bad) = sequences.iter().flatten().find(|&&t| t >= vocab_size) {
            return Err(Error::Input(format!("token {bad} outside vocabulary of {vocab_size}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Input(format!("label {bad} outside 0..{class_count}")));
        }
        Ok(Self {
            sequences,
            labels,
            vocab_size,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sequences(&self) -> &[Vec<usize>] {
        &self.sequences
    }

    pub fn sequence(&self, i: usize) -> &[usize] {
        &self.sequences[i]
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            vocab_size: self.vocab_size,
            class_count: self.class_count,
        }
    }
}

/// Either kind of labelled dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Tabular(TabularDataset),
    Tokens(TokenDataset),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Tabular(d) => d.len(),
            Dataset::Tokens(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> &[usize] {
        match self {
            Dataset::Tabular(d) => d.labels(),
            Dataset::Tokens(d) => d.labels(),
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            Dataset::Tabular(d) => d.class_count(),
            Dataset::Tokens(d) => d.class_count(),
        }
    }

    /// Copies the given samples, in order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        match self {
            Dataset::Tabular(d) => Dataset::Tabular(d.subset(indices)),
            Dataset::Tokens(d) => Dataset::Tokens(d.subset(indices)),
        }
    }
}

impl From<TabularDataset> for Dataset {
    fn from(d: TabularDataset) -> Self {
        Dataset::Tabular(d)
    }
}

impl From<TokenDataset> for Dataset {
    fn from(d: TokenDataset) -> Self {
        Dataset::Tokens(d)
    }
}

/// Reads a numeric CSV with a header row. Every column except `label_column`
/// is a feature; label strings are densified to `0..C` in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<TabularDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_csv(file, label_column)
}

pub fn read_csv<R: std::io::Read>(reader: R, label_column: &str) -> Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Schema(format!("missing label column `{label_column}`")))?;
    let dim = headers.len() - 1;

    let mut classes: HashMap<String, usize> = HashMap::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (col, cell) in record.iter().enumerate() {
            if col == label_idx {
                let next = classes.len();
                labels.push(*classes.entry(cell.trim().to_string()).or_insert(next));
                continue;
            }
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: row + 1,
                column: headers[col].to_string(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row: row + 1,
                    column: headers[col].to_string(),
                    message: format!("`{cell}` is not finite"),
                });
            }
            features.push(value);
        }
    }
    if labels.is_empty() {
        return Err(Error::Input("CSV has no data rows".into()));
    }
    TabularDataset::new(features, dim, labels, classes.len())
}

/// Reads a CIFAR-10 binary batch: records of one label byte followed by
/// 3072 pixel bytes. Pixels are scaled to `[0, 1]` by dividing by 255.
pub fn load_cifar_batch(path: impl AsRef<Path>) -> Result<TabularDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_cifar_batch(&bytes)
}

pub fn decode_cifar_batch(bytes: &[u8]) -> Result<TabularDataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * CIFAR_IMAGE_BYTES);
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Format(format!("record {i} has label {label}")));
        }
        labels.push(label);
        features.extend(record[1..].iter().map(|&p| p as f64 / 255.0));
    }
    TabularDataset::new(features, CIFAR_IMAGE_BYTES, labels, CIFAR_CLASSES)
}

/// Inverse of [`decode_cifar_batch`]; features are rounded to the nearest byte.
pub fn encode_cifar_batch(dataset: &TabularDataset) -> Result<Vec<u8>> {
    if dataset.dim() != CIFAR_IMAGE_BYTES {
        return Err(Error::Dimension(format!(
            "CIFAR records need {CIFAR_IMAGE_BYTES} features, got {}",
            dataset.dim()
        )));
    }
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD_BYTES);
    for i in 0..dataset.len() {
        let label = dataset.labels()[i];
        if label >= CIFAR_CLASSES {
            return Err(Error::Format(format!("label {label} does not fit CIFAR-10")));
        }
        out.push(label as u8);
        out.extend(
            dataset
                .row(i)
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    Ok(out)
}

/// Reads a token corpus, one sample per line: `<label> <id> <id> ...`.
pub fn load_token_corpus(path: impl AsRef<Path>) -> Result<TokenDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_token_corpus(&text)
}

pub fn parse_token_corpus(text: &str) -> Result<TokenDataset> {
    let mut sequences = Vec::new();
    let mut labels = Vec::new();
    for (row, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let parse = |field: &str, column: String| {
            field.parse::<usize>().map_err(|_| Error::Parse {
                row: row + 1,
                column,
                message: format!("`{field}` is not a non-negative integer"),
            })
        };
        let label = parse(fields.next().unwrap_or_default(), "label".into())?;
        let tokens = fields
            .enumerate()
            .map(|(i, f)| parse(f, format!("token {}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        labels.push(label);
        sequences.push(tokens);
    }
    let vocab = sequences.iter().flatten().max().map_or(1, |m| m + 1);
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    TokenDataset::new(sequences, labels, vocab, classes)
}

pub fn format_token_corpus(dataset: &TokenDataset) -> String {
    let mut out = String::new();
    for (seq, label) in dataset.sequences().iter().zip(dataset.labels()) {
        out.push_str(&label.to_string());
        for t in seq {
            out.push(' ');
            out.push_str(&t.to_string());
        }
        out.push('\n');
    }
    out
}

/// Train/validation/test fractions plus the seed of the shuffling permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    #[serde(default)]
    pub seed: u64,
    /// Shuffle and slice each class separately so every split keeps the class balance.
    #[serde(default)]
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Self {
        Self {
            train,
            val,
            test,
            seed,
            stratified: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::Config(format!("split fractions must be positive, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    fn sizes(&self, n: usize) -> (usize, usize) {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        (train, val)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle-then-slice partition of `0..labels.len()`.
pub fn split_indices(labels: &[usize], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = labels.len();
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    if spec.stratified {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        for class in 0..classes {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            members.shuffle(&mut rng);
            let (tr, va) = spec.sizes(members.len());
            out.train.extend_from_slice(&members[..tr]);
            out.val.extend_from_slice(&members[tr..tr + va]);
            out.test.extend_from_slice(&members[tr + va..]);
        }
        out.train.shuffle(&mut rng);
        out.val.shuffle(&mut rng);
        out.test.shuffle(&mut rng);
    } else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let (tr, va) = spec.sizes(n);
        out.test = perm.split_off(tr + va);
        out.val = perm.split_off(tr);
        out.train = perm;
    }
    for (name, part) in [("train", &out.train), ("val", &out.val), ("test", &out.test)] {
        if part.is_empty() {
            return Err(Error::Config(format!(
                "{name} split is empty for {n} samples with fractions ({}, {}, {})",
                spec.train, spec.val, spec.test
            )));
        }
    }
    Ok(out)
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let idx = split_indices(dataset.labels(), spec)?;
    Ok(Splits {
        train: dataset.subset(&idx.train),
        val: dataset.subset(&idx.val),
        test: dataset.subset(&idx.test),
    })
}

/// Isotropic Gaussian clusters around seeded centers drawn from `[-10, 10]^dim`.
/// Samples are ordered class by class.
pub fn make_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<TabularDataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Config("blob counts must all be at least 1".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("blob spread must be a finite non-negative number, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..classes * dim).map(|_| rng.random_range(-10.0..=10.0)).collect();
    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        let center = &centers[class * dim..(class + 1) * dim];
        for _ in 0..per_class {
            for &c in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(c + spread * z);
            }
            labels.push(class);
        }
    }
    TabularDataset::new(features, dim, labels, classes)
}

/// Token ids planted as sentiment markers by [`make_toy_sentiment`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentimentVocabulary {
    pub positive: std::ops::RangeInclusive<usize>,
    pub negative: std::ops::RangeInclusive<usize>,
    pub vocab_size: usize,
}

impl SentimentVocabulary {
    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size < 3 {
            return Err(Error::Config(format!(
                "toy sentiment needs a vocabulary of at least 3 (pad, positive, negative), got {vocab_size}"
            )));
        }
        let per_set = ((vocab_size - 1) / 4).max(1);
        Ok(Self {
            positive: 1..=per_set,
            negative: per_set + 1..=2 * per_set,
            vocab_size,
        })
    }

    /// +1 for a positive marker, -1 for a negative marker, 0 otherwise.
    pub fn polarity(&self, token: usize) -> i32 {
        if self.positive.contains(&token) {
            1
        } else if self.negative.contains(&token) {
            -1
        } else {
            0
        }
    }
}

/// Binary sentiment corpus. The label of every sequence is the majority
/// polarity of its planted marker tokens (1 = positive), so the task is learnable.
pub fn make_toy_sentiment(vocab_size: usize, n: usize, max_len: usize, seed: u64) -> Result<TokenDataset> {
    if n == 0 || max_len == 0 {
        return Err(Error::Config("toy sentiment counts must all be at least 1".into()));
    }
    let vocab = SentimentVocabulary::new(vocab_size)?;
    let neutral_start = *vocab.negative.end() + 1;
    let has_neutral = neutral_start < vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |range: &std::ops::RangeInclusive<usize>, rng: &mut ChaCha8Rng| rng.random_range(range.clone());

    let mut sequences = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let len = rng.random_range((max_len / 2).max(1)..=max_len);
        let target_positive = rng.random_bool(0.5);
        let (own, other) = if target_positive {
            (&vocab.positive, &vocab.negative)
        } else {
            (&vocab.negative, &vocab.positive)
        };
        let mut seq: Vec<usize> = (0..len)
            .map(|_| {
                if has_neutral && rng.random_bool(0.4) {
                    rng.random_range(neutral_start..vocab_size)
                } else if rng.random_bool(0.75) {
                    pick(own, &mut rng)
                } else {
                    pick(other, &mut rng)
                }
            })
            .collect();
        let mut score: i32 = seq.iter().map(|&t| vocab.polarity(t)).sum();
        if score == 0 {
            let target = if target_positive { 1 } else { -1 };
            let slot = seq
                .iter()
                .position(|&t| vocab.polarity(t) != target)
                .expect("a tied sequence holds a non-target token");
            seq[slot] = pick(own, &mut rng);
            score = seq.iter().map(|&t| vocab.polarity(t)).sum();
        }
        labels.push(usize::from(score > 0));
        sequences.push(seq);
    }
    TokenDataset::new(sequences, labels, vocab_size, 2)
}
