//! Sequence-level calibration metrics and overconfidence diagnostics.
//!
//! A prediction counts as correct only when the whole decoded sequence equals
//! the target; its confidence is the model's probability for the decoded
//! sequence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::semlm::{perplexity, BiContextLM};
use crate::task::{LabelSequence, TokenId};
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: u64,
    pub target: LabelSequence,
    pub decoded: LabelSequence,
    pub confidence: f64,
    pub correct: bool,
    pub hardness: f64,
    /// Probability the model gave each decoded token, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probs: Option<Vec<f64>>,
}

impl PredictionRecord {
    pub fn new(
        sample_id: u64,
        target: LabelSequence,
        decoded: LabelSequence,
        confidence: f64,
        hardness: f64,
    ) -> Self {
        let correct = decoded == target;
        Self {
            sample_id,
            target,
            decoded,
            confidence,
            correct,
            hardness,
            token_probs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinScheme {
    EqualWidth,
    EqualMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub confidence: f64,
    pub accuracy: f64,
}

impl Bin {
    pub fn gap(&self) -> f64 {
        (self.accuracy - self.confidence).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub records: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub ace: f64,
    pub mce: f64,
    pub scheme: BinScheme,
    pub bins: Vec<Bin>,
}

fn fill_bin(lower: f64, upper: f64, members: &[&PredictionRecord]) -> Bin {
    let count = members.len();
    let (confidence, accuracy) = if count == 0 {
        (0.0, 0.0)
    } else {
        let c: f64 = members.iter().map(|r| r.confidence).sum();
        let a = members.iter().filter(|r| r.correct).count() as f64;
        (c / count as f64, a / count as f64)
    };
    Bin {
        lower,
        upper,
        count,
        confidence,
        accuracy,
    }
}

/// Bins `[i/b, (i+1)/b)`, the last one closed at 1.
fn equal_width_index(conf: f64, bins: usize) -> usize {
    let b = bins as f64;
    let mut idx = ((conf * b).floor().max(0.0) as usize).min(bins - 1);
    while idx > 0 && conf < idx as f64 / b {
        idx -= 1;
    }
    while idx + 1 < bins && conf >= (idx + 1) as f64 / b {
        idx += 1;
    }
    idx
}

pub fn make_bins(records: &[PredictionRecord], bins: usize, scheme: BinScheme) -> Vec<Bin> {
    match scheme {
        BinScheme::EqualWidth => {
            let mut groups: Vec<Vec<&PredictionRecord>> = vec![Vec::new(); bins];
            for r in records {
                groups[equal_width_index(r.confidence, bins)].push(r);
            }
            groups
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    fill_bin(i as f64 / bins as f64, (i + 1) as f64 / bins as f64, g)
                })
                .collect()
        }
        BinScheme::EqualMass => {
            let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
            sorted.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
            let n = sorted.len();
            let mut out = Vec::with_capacity(bins);
            let mut start = 0;
            for i in 0..bins {
                let size = n / bins + usize::from(i < n % bins);
                let members = &sorted[start..start + size];
                let (lo, hi) = match (members.first(), members.last()) {
                    (Some(a), Some(b)) => (a.confidence, b.confidence),
                    _ => (f64::NAN, f64::NAN),
                };
                out.push(fill_bin(lo, hi, members));
                start += size;
            }
            out
        }
    }
}

fn weighted_gap(bins: &[Bin], total: usize) -> f64 {
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / total as f64 * b.gap())
        .sum()
}

/// ECE and MCE over equal-width bins, ACE over equal-mass bins. Empty bins
/// add nothing to ECE/ACE and are ignored by MCE. `scheme` picks which bin
/// table is returned for plotting.
pub fn calibration_report(
    records: &[PredictionRecord],
    bins: usize,
    scheme: BinScheme,
) -> Result<CalibrationReport> {
    if records.is_empty() {
        return Err(Error::Empty("prediction records"));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bin count must be >= 1".into()));
    }
    let width = make_bins(records, bins, BinScheme::EqualWidth);
    let mass = make_bins(records, bins, BinScheme::EqualMass);
    let n = records.len();
    let ece = weighted_gap(&width, n);
    let ace = weighted_gap(&mass, n);
    let mce = width
        .iter()
        .filter(|b| b.count > 0)
        .map(Bin::gap)
        .fold(0.0, f64::max);
    Ok(CalibrationReport {
        records: n,
        accuracy: sequence_accuracy(records)?,
        ece,
        ace,
        mce,
        scheme,
        bins: match scheme {
            BinScheme::EqualWidth => width,
            BinScheme::EqualMass => mass,
        },
    })
}

pub fn sequence_accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("prediction records"));
    }
    Ok(records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match(usize, usize),
    Substitute(usize, usize),
    /// Target position with no decoded counterpart.
    Delete(usize),
    /// Decoded position with no target counterpart.
    Insert(usize),
}

/// Minimum edit-distance alignment of `target` to `decoded`. On equal cost
/// the backtrace prefers a diagonal step, then a deletion, then an insertion.
pub fn align(target: &[TokenId], decoded: &[TokenId]) -> Vec<EditOp> {
    let (n, m) = (target.len(), decoded.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(target[i - 1] != decoded[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let diff = usize::from(target[i - 1] != decoded[j - 1]);
            if dp[i][j] == dp[i - 1][j - 1] + diff {
                ops.push(if diff == 0 {
                    EditOp::Match(i - 1, j - 1)
                } else {
                    EditOp::Substitute(i - 1, j - 1)
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            ops.push(EditOp::Delete(i - 1));
            i -= 1;
        } else {
            ops.push(EditOp::Insert(j - 1));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub truth: TokenId,
    pub predicted: TokenId,
    pub count: usize,
    /// Share (percent) of all substitutions of `truth` that went to
    /// `predicted`.
    pub frequency: f64,
    /// Mean probability the model gave `predicted` at those positions.
    pub mean_prob: f64,
}

/// Token substitution statistics over mispredicted records, most frequent
/// first.
pub fn confusion_pair_stats(records: &[PredictionRecord]) -> Result<Vec<ConfusionRow>> {
    let mut pairs: BTreeMap<(TokenId, TokenId), (usize, f64)> = BTreeMap::new();
    let mut per_truth: BTreeMap<TokenId, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.correct) {
        let probs = r.token_probs.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "record {} has no per-token probabilities",
                r.sample_id
            ))
        })?;
        for op in align(&r.target, &r.decoded) {
            if let EditOp::Substitute(i, j) = op {
                let (g, p) = (r.target[i], r.decoded[j]);
                let e = pairs.entry((g, p)).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += probs.get(j).copied().unwrap_or(f64::NAN);
                *per_truth.entry(g).or_insert(0) += 1;
            }
        }
    }
    let mut rows: Vec<ConfusionRow> = pairs
        .into_iter()
        .map(|((truth, predicted), (count, psum))| ConfusionRow {
            truth,
            predicted,
            count,
            frequency: 100.0 * count as f64 / per_truth[&truth] as f64,
            mean_prob: psum / count as f64,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.frequency
            .total_cmp(&a.frequency)
            .then(b.count.cmp(&a.count))
            .then((a.truth, a.predicted).cmp(&(b.truth, b.predicted)))
    });
    Ok(rows)
}

/// Average ranks, ties sharing the mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` with fewer than two points or a
/// constant coordinate.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerplexityCorrelation {
    /// `(perplexity of the decoded sequence, confidence)` per misprediction.
    pub points: Vec<(f64, f64)>,
    pub rank_correlation: Option<f64>,
}

/// Relation between how language-like a wrong prediction is and how
/// confident the model was about it. Empty decodings have no perplexity and
/// are left out.
pub fn perplexity_confidence_correlation(
    records: &[PredictionRecord],
    lm: &BiContextLM,
) -> Result<PerplexityCorrelation> {
    let points = records
        .iter()
        .filter(|r| !r.correct && !r.decoded.is_empty())
        .map(|r| Ok((perplexity(lm, &r.decoded)?, r.confidence)))
        .collect::<Result<Vec<_>>>()?;
    let (px, cy): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    Ok(PerplexityCorrelation {
        rank_correlation: spearman(&px, &cy),
        points,
    })
}

pub fn write_predictions<W: Write>(records: &[PredictionRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w).map_err(|e| Error::io("<predictions>", e))?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<predictions>", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn save_predictions(records: &[PredictionRecord], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions(records, std::io::BufWriter::new(f))
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(std::io::BufReader::new(f))
}

/// One `overall` row followed by one `bin` row per bin.
pub fn write_report_csv<W: Write>(report: &CalibrationReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "scope", "lower", "upper", "count", "confidence", "accuracy", "ece", "ace", "mce",
    ])?;
    let mean_conf = report
        .bins
        .iter()
        .map(|b| b.confidence * b.count as f64)
        .sum::<f64>()
        / report.records as f64;
    out.write_record([
        "overall".to_string(),
        "0".into(),
        "1".into(),
        report.records.to_string(),
        format!("{mean_conf:.6}"),
        format!("{:.6}", report.accuracy),
        format!("{:.6}", report.ece),
        format!("{:.6}", report.ace),
        format!("{:.6}", report.mce),
    ])?;
    for b in &report.bins {
        out.write_record([
            "bin".to_string(),
            format!("{:.6}", b.lower),
            format!("{:.6}", b.upper),
            b.count.to_string(),
            format!("{:.6}", b.confidence),
            format!("{:.6}", b.accuracy),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

/// Reliability diagram: accuracy bars per bin against the identity line.
pub fn reliability_svg(report: &CalibrationReport, title: &str) -> String {
    const SIZE: f64 = 360.0;
    const PAD: f64 = 48.0;
    let x = |v: f64| PAD + v * SIZE;
    let y = |v: f64| PAD + (1.0 - v) * SIZE;
    let total = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        total / 2.0,
        escape(title)
    );
    for b in report.bins.iter().filter(|b| b.count > 0) {
        let (lo, hi) = match report.scheme {
            BinScheme::EqualWidth => (b.lower, b.upper),
            // equal-mass bins are drawn centred on their mean confidence
            BinScheme::EqualMass => ((b.confidence - 0.02).max(0.0), (b.confidence + 0.02).min(1.0)),
        };
        let w = (hi - lo) * SIZE;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4c72b0" stroke="#223" stroke-width="0.5"/>"##,
            x(lo),
            y(b.accuracy),
            w,
            b.accuracy * SIZE
        );
        let (top, bottom) = if b.confidence > b.accuracy {
            (b.confidence, b.accuracy)
        } else {
            (b.accuracy, b.confidence)
        };
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#dd8452" fill-opacity="0.5"/>"##,
            x(lo),
            y(top),
            w,
            (top - bottom) * SIZE
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#888" stroke-dasharray="4 3"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#000"/>"##
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#,
            x(v),
            PAD + SIZE + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            PAD - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">confidence</text>"#,
        total / 2.0,
        total - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">accuracy</text>"#,
        total / 2.0,
        total / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}">ECE {:.2}%  MCE {:.2}%</text>"#,
        PAD + 8.0,
        PAD + 18.0,
        100.0 * report.ece,
        100.0 * report.mce
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
