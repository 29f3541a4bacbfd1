//! Domain types and the synthetic sequence-recognition task.
//!
//! Every token of the alphabet owns a prototype vector in feature space. A
//! sample is a lexicon word rendered as a run of noisy frames per token.
//! Confusable token pairs sit close together in feature space, so the
//! recognizer confuses them under noise; the weighted lexicon gives the label
//! distribution its semantic regularities.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Deref;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::math::mix_seed;
use crate::{Error, Result};

pub type TokenId = usize;

/// Default token symbols; the first four make the classic `0/o` and `1/l`
/// look-alikes.
const SYMBOLS: &str = "0o1labcdefghijkmnpqrstuvwxyz23456789";

/// Ordered token set. The CTC blank is the index one past the last token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    tokens: Vec<String>,
}

impl Alphabet {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "alphabet needs at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut seen = HashSet::new();
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate token symbol {t:?}")));
            }
        }
        Ok(Self { tokens })
    }

    /// The first `size` default symbols, falling back to `t<i>` names.
    pub fn standard(size: usize) -> Result<Self> {
        let tokens = (0..size)
            .map(|i| {
                SYMBOLS
                    .chars()
                    .nth(i)
                    .map(String::from)
                    .unwrap_or_else(|| format!("t{i}"))
            })
            .collect();
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank_id(&self) -> TokenId {
        self.tokens.len()
    }

    pub fn symbol(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn render(&self, seq: &LabelSequence) -> String {
        seq.iter().map(|&t| self.symbol(t)).collect()
    }

    /// Parses a string of single-character symbols.
    pub fn parse(&self, text: &str) -> Result<LabelSequence> {
        text.chars()
            .map(|c| {
                let s = c.to_string();
                self.tokens
                    .iter()
                    .position(|t| *t == s)
                    .ok_or_else(|| Error::Unknown {
                        what: "token symbol",
                        name: s,
                    })
            })
            .collect::<Result<Vec<_>>>()
            .map(LabelSequence)
    }
}

/// A target or candidate label sequence. Never contains the blank.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSequence(pub Vec<TokenId>);

impl LabelSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    /// Checks every id is a real token of a `vocab`-sized alphabet.
    pub fn validate(&self, vocab: usize) -> Result<()> {
        match self.0.iter().find(|&&t| t >= vocab) {
            Some(&t) => Err(Error::InvalidArgument(format!(
                "token id {t} outside alphabet of size {vocab}"
            ))),
            None => Ok(()),
        }
    }

    /// Minimum number of CTC frames needed to emit this sequence: one per
    /// token plus a separating blank between equal neighbours.
    pub fn min_ctc_frames(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }
}

impl Deref for LabelSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for LabelSequence {
    fn from(v: Vec<TokenId>) -> Self {
        Self(v)
    }
}

impl fmt::Display for LabelSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// `T x D` matrix of frames, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Empty("feature sequence"));
        }
        if data.len() != frames * dim {
            return Err(Error::DimensionMismatch {
                expected: frames * dim,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub x: FeatureSequence,
    pub y: LabelSequence,
    /// Noise level the sample was rendered at.
    pub hardness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusablePair {
    pub a: TokenId,
    pub b: TokenId,
    /// In (0, 1); the prototype distance shrinks by `1 - similarity`.
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub seq: LabelSequence,
    pub weight: f64,
}

/// Seed of the default lexicon.
pub const DEFAULT_LEXICON_SEED: u64 = 0x1e71c0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub alphabet_size: usize,
    pub feature_dim: usize,
    pub prototype_separation: f64,
    pub confusable_pairs: Vec<ConfusablePair>,
    pub lexicon: Vec<LexiconEntry>,
    /// Inclusive range of frames rendered per token.
    pub frames_per_token: (usize, usize),
    pub base_noise: f64,
    pub hard_noise: f64,
    pub hardness_ratio: f64,
    pub seed: u64,
}

impl Default for TaskSpec {
    /// Twelve tokens, two confusable pairs (`0/o`, `1/l`) and a 50-word
    /// lexicon.
    fn default() -> Self {
        let alphabet_size = 12;
        Self {
            alphabet_size,
            feature_dim: 12,
            prototype_separation: 2.0,
            confusable_pairs: vec![
                ConfusablePair {
                    a: 0,
                    b: 1,
                    similarity: 0.6,
                },
                ConfusablePair {
                    a: 2,
                    b: 3,
                    similarity: 0.6,
                },
            ],
            lexicon: generate_lexicon(alphabet_size, 50, DEFAULT_LEXICON_SEED),
            frames_per_token: (1, 3),
            base_noise: 0.3,
            hard_noise: 0.6,
            hardness_ratio: 0.5,
            seed: 17,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.alphabet_size < 2 {
            return bad(format!("alphabet size {} < 2", self.alphabet_size));
        }
        if self.feature_dim < self.alphabet_size {
            return bad(format!(
                "feature_dim {} must be at least alphabet_size {}",
                self.feature_dim, self.alphabet_size
            ));
        }
        if self.prototype_separation <= 0.0 || !self.prototype_separation.is_finite() {
            return bad("prototype_separation must be positive".into());
        }
        if self.lexicon.is_empty() {
            return bad("empty lexicon".into());
        }
        for e in &self.lexicon {
            if !(e.weight > 0.0) || !e.weight.is_finite() {
                return bad(format!("lexicon weight {} must be positive", e.weight));
            }
            if e.seq.is_empty() {
                return bad("lexicon entries must be non-empty".into());
            }
            e.seq.validate(self.alphabet_size)?;
        }
        let mut used = HashSet::new();
        for p in &self.confusable_pairs {
            if p.a >= self.alphabet_size || p.b >= self.alphabet_size || p.a == p.b {
                return bad(format!("confusable pair ({}, {}) invalid", p.a, p.b));
            }
            if !(p.similarity > 0.0 && p.similarity < 1.0) {
                return bad(format!("similarity {} outside (0, 1)", p.similarity));
            }
            if !used.insert(p.a) || !used.insert(p.b) {
                return bad("a token may belong to at most one confusable pair".into());
            }
        }
        let (lo, hi) = self.frames_per_token;
        if lo == 0 || hi < lo {
            return bad(format!("frames_per_token range ({lo}, {hi}) invalid"));
        }
        if !(self.base_noise >= 0.0) || !(self.hard_noise >= self.base_noise) {
            return bad("need 0 <= base_noise <= hard_noise".into());
        }
        if !(0.0..=1.0).contains(&self.hardness_ratio) {
            return bad(format!("hardness_ratio {} outside [0, 1]", self.hardness_ratio));
        }
        Ok(())
    }

    pub fn alphabet(&self) -> Result<Alphabet> {
        Alphabet::standard(self.alphabet_size)
    }

    /// One prototype per token. Base prototypes are scaled basis vectors at
    /// pairwise distance `prototype_separation`; the second member of each
    /// confusable pair is moved to within `(1 - similarity) * separation` of
    /// the first.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let scale = self.prototype_separation / std::f64::consts::SQRT_2;
        let mut protos: Vec<Vec<f64>> = (0..self.alphabet_size)
            .map(|k| {
                let mut v = vec![0.0; self.feature_dim];
                v[k] = scale;
                v
            })
            .collect();
        for p in &self.confusable_pairs {
            let mut v = protos[p.a].clone();
            v[p.b] = (1.0 - p.similarity) * self.prototype_separation;
            protos[p.b] = v;
        }
        protos
    }

    pub fn is_confusable(&self, a: TokenId, b: TokenId) -> bool {
        self.confusable_pairs
            .iter()
            .any(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
    }
}

/// A deterministic lexicon: half fresh words of length 3..=6, half
/// one-token variants of earlier words, with Zipf-like weights.
pub fn generate_lexicon(vocab: usize, count: usize, seed: u64) -> Vec<LexiconEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words: Vec<Vec<TokenId>> = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    let mut attempts = 0;
    while words.len() < count && attempts < count * 1000 {
        attempts += 1;
        let word: Vec<TokenId> = if !words.is_empty() && rng.random_bool(0.5) {
            let mut w = words[rng.random_range(0..words.len())].clone();
            let pos = rng.random_range(0..w.len());
            w[pos] = rng.random_range(0..vocab);
            w
        } else {
            let len = rng.random_range(3..=6);
            (0..len).map(|_| rng.random_range(0..vocab)).collect()
        };
        if seen.insert(word.clone()) {
            words.push(word);
        }
    }
    words
        .into_iter()
        .enumerate()
        .map(|(rank, w)| LexiconEntry {
            seq: LabelSequence(w),
            weight: 1.0 / (rank as f64 + 1.0).sqrt(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Unknown {
                what: "split",
                name: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub spec: TaskSpec,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<LabelSequence> {
        self.samples.iter().map(|s| s.y.clone()).collect()
    }

    /// Same spec and split, restricted to `ids` (in dataset order).
    pub fn subset(&self, ids: &HashSet<u64>) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| ids.contains(&s.id))
                .cloned()
                .collect(),
            spec: self.spec.clone(),
            split: self.split,
        }
    }

    /// Applies `corrupt` to every sample, with per-sample seeds from `seed`.
    pub fn corrupted(&self, kind: Corruption, severity: f64, seed: u64) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, s.id));
                Ok(Sample {
                    x: corrupt(&s.x, kind, severity, &mut rng)?,
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            samples,
            spec: self.spec.clone(),
            split: self.split,
        })
    }
}

/// Generates `n` samples. Labels are drawn from the lexicon in proportion to
/// weight; exactly `round(hardness_ratio * n)` samples (chosen at random) are
/// rendered at `hard_noise`, the rest at `base_noise`. Equal neighbouring
/// tokens are separated by one gap frame around the zero vector.
pub fn synth_dataset(spec: &TaskSpec, n: usize, split: Split) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    let split_seed = mix_seed(spec.seed, split.stream());
    let protos = spec.prototypes();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(split_seed, u64::MAX)));
    let n_hard = (spec.hardness_ratio * n as f64).round() as usize;
    let mut hard = vec![false; n];
    for &i in &order[..n_hard] {
        hard[i] = true;
    }

    let total_weight: f64 = spec.lexicon.iter().map(|e| e.weight).sum();
    let samples = (0..n)
        .map(|i| {
            let id = i as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(split_seed, id));
            let mut u = rng.random::<f64>() * total_weight;
            let mut entry = &spec.lexicon[spec.lexicon.len() - 1];
            for e in &spec.lexicon {
                if u < e.weight {
                    entry = e;
                    break;
                }
                u -= e.weight;
            }
            let sigma = if hard[i] {
                spec.hard_noise
            } else {
                spec.base_noise
            };
            let x = render(&entry.seq, &protos, spec, sigma, &mut rng)?;
            Ok(Sample {
                id,
                x,
                y: entry.seq.clone(),
                hardness: sigma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        spec: spec.clone(),
        split,
    })
}

fn render(
    seq: &LabelSequence,
    protos: &[Vec<f64>],
    spec: &TaskSpec,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureSequence> {
    let dim = spec.feature_dim;
    let (lo, hi) = spec.frames_per_token;
    let zero = vec![0.0; dim];
    let mut centers: Vec<&[f64]> = Vec::new();
    for (i, &tok) in seq.iter().enumerate() {
        if i > 0 && seq[i - 1] == tok {
            centers.push(&zero);
        }
        let k = rng.random_range(lo..=hi);
        centers.extend(std::iter::repeat_n(protos[tok].as_slice(), k));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut data = Vec::with_capacity(centers.len() * dim);
    for c in &centers {
        data.extend(c.iter().map(|&v| v + noise.sample(rng)));
    }
    FeatureSequence::new(centers.len(), dim, data)
}

/// Feature-space analogues of image corruptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    /// Additive Gaussian noise with standard deviation `severity`.
    Noise,
    /// Temporal Gaussian smoothing with kernel width `2 * severity` frames.
    Blur,
    /// Each frame zeroed with probability `min(severity, 1)`.
    Spatter,
    /// Soft clipping `(1 - s) x + s tanh(x)`, `s = min(severity, 1)`.
    Saturate,
}

impl Corruption {
    pub const ALL: [Corruption; 4] = [
        Corruption::Noise,
        Corruption::Blur,
        Corruption::Spatter,
        Corruption::Saturate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Corruption::Noise => "noise",
            Corruption::Blur => "blur",
            Corruption::Spatter => "spatter",
            Corruption::Saturate => "saturate",
        }
    }
}

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Corruption::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Unknown {
                what: "corruption kind",
                name: s.into(),
            })
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn corrupt<R: Rng + ?Sized>(
    x: &FeatureSequence,
    kind: Corruption,
    severity: f64,
    rng: &mut R,
) -> Result<FeatureSequence> {
    if !(severity >= 0.0) || !severity.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "severity {severity} must be finite and >= 0"
        )));
    }
    if severity == 0.0 {
        return Ok(x.clone());
    }
    let (t_len, dim) = (x.frames, x.dim);
    let data = match kind {
        Corruption::Noise => {
            let noise = Normal::new(0.0, severity).expect("positive std");
            x.data.iter().map(|&v| v + noise.sample(rng)).collect()
        }
        Corruption::Blur => {
            let kernel_std = 2.0 * severity;
            let radius = (3.0 * kernel_std).ceil() as isize;
            let weights: Vec<f64> = (-radius..=radius)
                .map(|k| (-0.5 * (k as f64 / kernel_std).powi(2)).exp())
                .collect();
            let norm: f64 = weights.iter().sum();
            let mut out = vec![0.0; x.data.len()];
            for t in 0..t_len {
                for (w, k) in weights.iter().zip(-radius..=radius) {
                    let src = reflect(t as isize + k, t_len);
                    let w = w / norm;
                    for d in 0..dim {
                        out[t * dim + d] += w * x.data[src * dim + d];
                    }
                }
            }
            out
        }
        Corruption::Spatter => {
            let p = severity.min(1.0);
            let mut out = x.data.clone();
            for t in 0..t_len {
                if rng.random::<f64>() < p {
                    out[t * dim..(t + 1) * dim].fill(0.0);
                }
            }
            out
        }
        Corruption::Saturate => {
            let s = severity.min(1.0);
            x.data.iter().map(|&v| (1.0 - s) * v + s * v.tanh()).collect()
        }
    };
    FeatureSequence::new(t_len, dim, data)
}

/// Half-sample symmetric boundary: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
/// Keeps the smoothing operator symmetric, hence doubly stochastic.
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Disjoint random partition with sizes from largest-remainder rounding.
/// Each part keeps the original sample order.
pub fn split_dataset(d: &Dataset, fractions: &[f64]) -> Result<Vec<Dataset>> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("no split fractions".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::InvalidArgument(format!("fraction {f} outside (0, 1]")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "fractions sum to {total}, expected 1"
        )));
    }
    let n = d.samples.len();
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut remainder = n - sizes.iter().sum::<usize>();
    let mut by_frac: Vec<usize> = (0..raw.len()).collect();
    by_frac.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in by_frac.iter().cycle() {
        if remainder == 0 {
            break;
        }
        sizes[i] += 1;
        remainder -= 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
        d.spec.seed,
        0x5b1u64 ^ d.split.stream(),
    )));
    let mut part_of = vec![0usize; n];
    let mut start = 0;
    for (p, &size) in sizes.iter().enumerate() {
        for &i in &order[start..start + size] {
            part_of[i] = p;
        }
        start += size;
    }
    Ok((0..sizes.len())
        .map(|p| Dataset {
            samples: d
                .samples
                .iter()
                .zip(&part_of)
                .filter(|(_, &q)| q == p)
                .map(|(s, _)| s.clone())
                .collect(),
            spec: d.spec.clone(),
            split: d.split,
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    spec: TaskSpec,
    split: Split,
    samples: usize,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: u64,
    y: Vec<TokenId>,
    frames: usize,
    dim: usize,
    x: Vec<f64>,
    hardness: f64,
}

/// JSON-lines: one header line with the spec, then one line per sample.
pub fn write_dataset<W: Write>(d: &Dataset, mut w: W) -> Result<()> {
    let header = DatasetHeader {
        spec: d.spec.clone(),
        split: d.split,
        samples: d.samples.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w).map_err(|e| Error::io("<dataset>", e))?;
    for s in &d.samples {
        let rec = SampleRecord {
            id: s.id,
            y: s.y.0.clone(),
            frames: s.x.frames,
            dim: s.x.dim,
            x: s.x.data.clone(),
            hardness: s.hardness,
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w).map_err(|e| Error::io("<dataset>", e))?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or(Error::Empty("dataset file"))?
        .map_err(|e| Error::io("<dataset>", e))?;
    let header: DatasetHeader = serde_json::from_str(&header_line)?;
    let mut samples = Vec::with_capacity(header.samples);
    for line in lines {
        let line = line.map_err(|e| Error::io("<dataset>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)?;
        samples.push(Sample {
            id: rec.id,
            x: FeatureSequence::new(rec.frames, rec.dim, rec.x)?,
            y: LabelSequence(rec.y),
            hardness: rec.hardness,
        });
    }
    if samples.len() != header.samples {
        return Err(Error::parse(
            "dataset",
            format!("header says {} samples, found {}", header.samples, samples.len()),
        ));
    }
    Ok(Dataset {
        samples,
        spec: header.spec,
        split: header.split,
    })
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_dataset(d, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(f))
}
