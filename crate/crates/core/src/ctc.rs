//! Connectionist Temporal Classification.
//!
//! Everything runs in log space. The blank is always the last class of a
//! [`ProbMatrix`] row, so a matrix over `V` tokens has `V + 1` columns.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::math::{argmax, log_add, log_softmax_into};
use crate::task::{LabelSequence, TokenId};
use crate::{Error, Result};

const ROW_TOLERANCE: f64 = 1e-6;

/// Per-frame categorical distributions over the alphabet plus blank.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    frames: usize,
    classes: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl ProbMatrix {
    pub fn new(frames: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Empty("probability matrix"));
        }
        if classes < 2 {
            return Err(Error::InvalidArgument(
                "need at least one token plus blank".into(),
            ));
        }
        if probs.len() != frames * classes {
            return Err(Error::DimensionMismatch {
                expected: frames * classes,
                got: probs.len(),
            });
        }
        for (row, chunk) in probs.chunks(classes).enumerate() {
            let sum: f64 = chunk.iter().sum();
            let in_range = chunk.iter().all(|p| (0.0..=1.0).contains(p));
            if !in_range || (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::NotADistribution { row, sum });
            }
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self {
            frames,
            classes,
            probs,
            log_probs,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != classes) {
            return Err(Error::DimensionMismatch {
                expected: classes,
                got: r.len(),
            });
        }
        Self::new(rows.len(), classes, rows.concat())
    }

    /// Row-wise softmax of raw scores.
    pub fn from_logits(frames: usize, classes: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != frames * classes {
            return Err(Error::DimensionMismatch {
                expected: frames * classes,
                got: logits.len(),
            });
        }
        let mut log_probs = vec![0.0; logits.len()];
        for (src, dst) in logits.chunks(classes).zip(log_probs.chunks_mut(classes)) {
            log_softmax_into(src, dst);
        }
        let probs = log_probs.iter().map(|v| v.exp()).collect();
        Ok(Self {
            frames,
            classes,
            probs,
            log_probs,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Number of real tokens (classes minus the blank).
    pub fn vocab(&self) -> usize {
        self.classes - 1
    }

    pub fn blank(&self) -> usize {
        self.classes - 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.classes..(t + 1) * self.classes]
    }

    pub fn log_row(&self, t: usize) -> &[f64] {
        &self.log_probs[t * self.classes..(t + 1) * self.classes]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub seq: LabelSequence,
    pub log_prob: f64,
}

impl ScoredSequence {
    pub fn new(seq: impl Into<LabelSequence>, log_prob: f64) -> Self {
        Self {
            seq: seq.into(),
            log_prob,
        }
    }
}

/// Best first; equal scores ordered by token sequence.
pub fn rank_order(a: &ScoredSequence, b: &ScoredSequence) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.seq.cmp(&b.seq))
}

/// Blank-interleaved label `∅ y1 ∅ y2 ... yL ∅`.
fn extended(y: &[TokenId], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * y.len() + 1);
    ext.push(blank);
    for &t in y {
        ext.push(t);
        ext.push(blank);
    }
    ext
}

/// Forward variables `alpha[t][s]` (log), flattened `T x S`.
fn forward(log_probs: &[f64], frames: usize, classes: usize, ext: &[usize]) -> Vec<f64> {
    let s_len = ext.len();
    let mut alpha = vec![f64::NEG_INFINITY; frames * s_len];
    alpha[0] = log_probs[ext[0]];
    if s_len > 1 {
        alpha[1] = log_probs[ext[1]];
    }
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        let lp = &log_probs[t * classes..(t + 1) * classes];
        // A path can only have reached s <= 2t + 1 by frame t.
        let reach = (2 * t + 2).min(s_len);
        for s in 0..reach {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if s >= 2 && ext[s] != ext[s - 2] {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == f64::NEG_INFINITY {
                acc
            } else {
                acc + lp[ext[s]]
            };
        }
    }
    alpha
}

fn final_log_prob(alpha: &[f64], frames: usize, s_len: usize) -> f64 {
    let last = &alpha[(frames - 1) * s_len..];
    if s_len == 1 {
        last[0]
    } else {
        log_add(last[s_len - 1], last[s_len - 2])
    }
}

fn log_posterior_raw(log_probs: &[f64], frames: usize, classes: usize, y: &[TokenId]) -> f64 {
    let ext = extended(y, classes - 1);
    if LabelSequence::new(y.to_vec()).min_ctc_frames() > frames {
        return f64::NEG_INFINITY;
    }
    let alpha = forward(log_probs, frames, classes, &ext);
    final_log_prob(&alpha, frames, ext.len())
}

/// `log P(y | m)`: the total probability of all frame alignments that
/// collapse to `y`. `-inf` when `y` cannot fit in the available frames.
pub fn ctc_log_posterior(m: &ProbMatrix, y: &LabelSequence) -> f64 {
    if y.iter().any(|&t| t >= m.vocab()) {
        return f64::NEG_INFINITY;
    }
    log_posterior_raw(&m.log_probs, m.frames, m.classes, y)
}

/// Loss `-log P(y)` and its gradient with respect to the logits that produced
/// `log_probs` through a row-wise softmax. `None` when `y` is infeasible.
pub fn ctc_loss_grad_from_log_probs(
    log_probs: &[f64],
    frames: usize,
    classes: usize,
    y: &[TokenId],
) -> Option<(f64, Vec<f64>)> {
    let blank = classes - 1;
    if y.iter().any(|&t| t >= blank) {
        return None;
    }
    let ext = extended(y, blank);
    let s_len = ext.len();
    let alpha = forward(log_probs, frames, classes, &ext);
    let log_p = final_log_prob(&alpha, frames, s_len);
    if log_p == f64::NEG_INFINITY {
        return None;
    }

    // beta[t][s]: probability of finishing from state s at frame t, not
    // counting the emission at t.
    let mut beta = vec![f64::NEG_INFINITY; frames * s_len];
    let last = (frames - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        let lp_next = &log_probs[(t + 1) * classes..(t + 2) * classes];
        for s in 0..s_len {
            let nb = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut acc = nb[s] + lp_next[ext[s]];
            if s + 1 < s_len {
                acc = log_add(acc, nb[s + 1] + lp_next[ext[s + 1]]);
            }
            if s + 2 < s_len && ext[s + 2] != ext[s] {
                acc = log_add(acc, nb[s + 2] + lp_next[ext[s + 2]]);
            }
            beta[t * s_len + s] = acc;
        }
    }

    let mut grad: Vec<f64> = log_probs.iter().map(|v| v.exp()).collect();
    for t in 0..frames {
        let row = &mut grad[t * classes..(t + 1) * classes];
        for s in 0..s_len {
            let a = alpha[t * s_len + s];
            let b = beta[t * s_len + s];
            if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                continue;
            }
            row[ext[s]] -= (a + b - log_p).exp();
        }
    }
    Some((-log_p, grad))
}

/// CTC loss `-log P(y | softmax(logits))` with its gradient w.r.t. `logits`
/// (`frames x classes`, blank last). Infeasible targets are an error here.
pub fn ctc_loss_and_grad(
    logits: &[f64],
    frames: usize,
    classes: usize,
    y: &LabelSequence,
) -> Result<(f64, Vec<f64>)> {
    if logits.len() != frames * classes {
        return Err(Error::DimensionMismatch {
            expected: frames * classes,
            got: logits.len(),
        });
    }
    y.validate(classes - 1)?;
    let mut log_probs = vec![0.0; logits.len()];
    for (src, dst) in logits.chunks(classes).zip(log_probs.chunks_mut(classes)) {
        log_softmax_into(src, dst);
    }
    ctc_loss_grad_from_log_probs(&log_probs, frames, classes, y).ok_or(Error::Infeasible {
        len: y.len(),
        frames,
    })
}

/// Best-path decoding: per-frame argmax, merge repeats, drop blanks.
pub fn greedy_decode(m: &ProbMatrix) -> LabelSequence {
    greedy_decode_with_probs(m).0
}

/// Greedy decoding that also reports, for each emitted token, the highest
/// frame probability within the run of frames that produced it.
pub fn greedy_decode_with_probs(m: &ProbMatrix) -> (LabelSequence, Vec<f64>) {
    let blank = m.blank();
    let mut out = Vec::new();
    let mut token_probs: Vec<f64> = Vec::new();
    let mut prev = blank;
    for t in 0..m.frames {
        let row = m.row(t);
        let best = argmax(row);
        if best != blank {
            if best != prev {
                out.push(best);
                token_probs.push(row[best]);
            } else if let Some(p) = token_probs.last_mut() {
                *p = p.max(row[best]);
            }
        }
        prev = best;
    }
    (LabelSequence(out), token_probs)
}

#[derive(Debug, Clone)]
struct Prefix {
    seq: Vec<TokenId>,
    /// log mass of alignments ending in blank
    blank: f64,
    /// log mass of alignments ending in the last token
    token: f64,
}

impl Prefix {
    fn total(&self) -> f64 {
        log_add(self.blank, self.token)
    }
}

/// Top-`n` label sequences by CTC posterior via prefix beam search.
///
/// Each beam entry is a label prefix carrying the mass of alignments that end
/// in a blank and in its last token separately, so all alignments of a prefix
/// are merged. `beam_width = None` keeps every prefix, which makes the result
/// exact (and exponential in the number of frames).
pub fn top_n_perception(
    m: &ProbMatrix,
    n: usize,
    beam_width: Option<usize>,
) -> Vec<ScoredSequence> {
    if n == 0 {
        return Vec::new();
    }
    let blank = m.blank();
    let mut beam = vec![Prefix {
        seq: Vec::new(),
        blank: 0.0,
        token: f64::NEG_INFINITY,
    }];
    for t in 0..m.frames {
        let lp = m.log_row(t);
        let mut next: HashMap<Vec<TokenId>, (f64, f64)> = HashMap::with_capacity(beam.len() * 4);
        for p in &beam {
            let total = p.total();
            let e = next
                .entry(p.seq.clone())
                .or_insert((f64::NEG_INFINITY, f64::NEG_INFINITY));
            e.0 = log_add(e.0, total + lp[blank]);
            if let Some(&last) = p.seq.last() {
                // repeated token without a blank collapses into the same prefix
                e.1 = log_add(e.1, p.token + lp[last]);
            }
            for c in 0..blank {
                if lp[c] == f64::NEG_INFINITY {
                    continue;
                }
                let from = if p.seq.last() == Some(&c) {
                    p.blank
                } else {
                    total
                };
                if from == f64::NEG_INFINITY {
                    continue;
                }
                let mut seq = p.seq.clone();
                seq.push(c);
                let e = next
                    .entry(seq)
                    .or_insert((f64::NEG_INFINITY, f64::NEG_INFINITY));
                e.1 = log_add(e.1, from + lp[c]);
            }
        }
        beam = next
            .into_iter()
            .map(|(seq, (b, k))| Prefix {
                seq,
                blank: b,
                token: k,
            })
            .filter(|p| p.total() > f64::NEG_INFINITY)
            .collect();
        beam.sort_by(|a, b| b.total().total_cmp(&a.total()).then_with(|| a.seq.cmp(&b.seq)));
        if let Some(w) = beam_width {
            beam.truncate(w.max(n));
        }
    }
    let mut out: Vec<ScoredSequence> = beam
        .into_iter()
        .map(|p| ScoredSequence::new(p.seq, 0.0))
        .collect();
    // Final scores from the forward algorithm so they agree bit-for-bit with
    // `ctc_log_posterior`.
    for s in &mut out {
        s.log_prob = ctc_log_posterior(m, &s.seq);
    }
    out.sort_by(rank_order);
    out.truncate(n);
    out
}

const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Scores every label sequence of length `<= T` and returns the top `n`
/// among those with nonzero posterior. Test oracle for [`top_n_perception`]; refuses instances with more than
/// 10^6 alignments.
pub fn brute_force_rank(m: &ProbMatrix, n: usize) -> Result<Vec<ScoredSequence>> {
    let alignments = (m.classes as u128)
        .checked_pow(m.frames as u32)
        .unwrap_or(u128::MAX);
    if alignments > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(alignments));
    }
    let all = enumerate_sequences(m.vocab(), m.frames);
    let mut scored: Vec<ScoredSequence> = all
        .into_iter()
        .map(|seq| {
            let lp = ctc_log_posterior(m, &seq);
            ScoredSequence { seq, log_prob: lp }
        })
        .filter(|s| s.log_prob > f64::NEG_INFINITY)
        .collect();
    scored.sort_by(rank_order);
    scored.truncate(n);
    Ok(scored)
}

/// All sequences over `vocab` tokens with length `0..=max_len`.
pub fn enumerate_sequences(vocab: usize, max_len: usize) -> Vec<LabelSequence> {
    let mut out = vec![LabelSequence::empty()];
    let mut frontier = vec![Vec::<TokenId>::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * vocab);
        for s in &frontier {
            for c in 0..vocab {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned().map(LabelSequence));
        frontier = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::log_sum_exp;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_frame() -> ProbMatrix {
        // token a = 0, blank = 1
        ProbMatrix::from_rows(&[vec![0.6, 0.4], vec![0.6, 0.4]]).unwrap()
    }

    fn random_matrix(rng: &mut impl Rng, frames: usize, classes: usize) -> ProbMatrix {
        let logits: Vec<f64> = (0..frames * classes)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        ProbMatrix::from_logits(frames, classes, &logits).unwrap()
    }

    fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut prev = usize::MAX;
        for &p in path {
            if p != blank && p != prev {
                out.push(p);
            }
            prev = p;
        }
        out
    }

    /// Alignment enumeration oracle: sums every path that collapses to `y`.
    fn enumerate_posterior(m: &ProbMatrix, y: &[usize]) -> f64 {
        let c = m.classes();
        let total = c.pow(m.frames() as u32);
        let mut sum = 0.0;
        for code in 0..total {
            let mut path = Vec::with_capacity(m.frames());
            let mut rest = code;
            for _ in 0..m.frames() {
                path.push(rest % c);
                rest /= c;
            }
            if collapse(&path, m.blank()) == y {
                sum += path
                    .iter()
                    .enumerate()
                    .map(|(t, &k)| m.row(t)[k])
                    .product::<f64>();
            }
        }
        sum
    }

    #[test]
    fn worked_two_frame_posteriors() {
        let m = two_frame();
        let a = ctc_log_posterior(&m, &LabelSequence::new(vec![0]));
        assert!((a - 0.84f64.ln()).abs() < 1e-12);
        let e = ctc_log_posterior(&m, &LabelSequence::empty());
        assert!((e - 0.16f64.ln()).abs() < 1e-12);
        assert_eq!(
            ctc_log_posterior(&m, &LabelSequence::new(vec![0, 0])),
            f64::NEG_INFINITY
        );
        assert_eq!(
            ctc_log_posterior(&m, &LabelSequence::new(vec![0, 0, 0])),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn full_length_target_without_repeats() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_matrix(&mut rng, 3, 4);
        let y = [2usize, 0, 1];
        let expected: f64 = (0..3).map(|t| m.log_row(t)[y[t]]).sum();
        let got = ctc_log_posterior(&m, &LabelSequence::new(y.to_vec()));
        assert!((got - expected).abs() < 1e-12);
        let rep = LabelSequence::new(vec![1, 1, 2]);
        assert_eq!(ctc_log_posterior(&m, &rep), f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_non_distribution_rows() {
        assert!(matches!(
            ProbMatrix::from_rows(&[vec![0.5, 0.6]]),
            Err(Error::NotADistribution { row: 0, .. })
        ));
        assert!(ProbMatrix::from_rows(&[vec![1.2, -0.2]]).is_err());
    }

    #[test]
    fn uniform_logits_loss() {
        let (loss, _) = ctc_loss_and_grad(&[0.0; 4], 2, 2, &LabelSequence::new(vec![0])).unwrap();
        // 4 equally likely paths, 3 of which collapse to "a"
        assert!((loss - -(3.0f64 / 4.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_three_class_loss() {
        // V = 2 tokens + blank, T = 2: 9 paths of probability 1/9; "a" is
        // produced by aa, a∅, ∅a.
        let (loss, _) = ctc_loss_and_grad(&[0.0; 6], 2, 3, &LabelSequence::new(vec![0])).unwrap();
        assert!((loss - -(3.0f64 / 9.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_loss_is_an_error() {
        let r = ctc_loss_and_grad(&[0.0; 4], 2, 2, &LabelSequence::new(vec![0, 0]));
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn loss_positive_for_finite_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..12).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (loss, _) = ctc_loss_and_grad(&logits, 4, 3, &LabelSequence::new(vec![1])).unwrap();
            assert!(loss > 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-5;
        for _ in 0..100 {
            let frames = rng.random_range(1..=5);
            let vocab = rng.random_range(1..=3);
            let classes = vocab + 1;
            let len = rng.random_range(0..=frames);
            let y = LabelSequence::new((0..len).map(|_| rng.random_range(0..vocab)).collect());
            if y.min_ctc_frames() > frames {
                continue;
            }
            let logits: Vec<f64> = (0..frames * classes)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let (_, grad) = ctc_loss_and_grad(&logits, frames, classes, &y).unwrap();
            for i in 0..logits.len() {
                let mut up = logits.clone();
                up[i] += h;
                let mut dn = logits.clone();
                dn[i] -= h;
                let fu = ctc_loss_and_grad(&up, frames, classes, &y).unwrap().0;
                let fd = ctc_loss_and_grad(&dn, frames, classes, &y).unwrap().0;
                let num = (fu - fd) / (2.0 * h);
                let rel = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-6);
                assert!(rel <= 1e-4, "rel err {rel}: {num} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn posterior_matches_alignment_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let frames = rng.random_range(1..=4);
            let vocab = rng.random_range(1..=3);
            let m = random_matrix(&mut rng, frames, vocab + 1);
            for y in enumerate_sequences(vocab, frames) {
                let oracle = enumerate_posterior(&m, &y);
                let got = ctc_log_posterior(&m, &y).exp();
                assert!((oracle - got).abs() <= 1e-12 * oracle.max(1e-300) + 1e-300);
            }
        }
    }

    #[test]
    fn greedy_collapse_rules() {
        // classes: a=0, b=1, blank=2
        let one_hot = |k: usize| {
            let mut r = vec![0.05; 3];
            r[k] = 0.9;
            r
        };
        let m = ProbMatrix::from_rows(&[one_hot(2), one_hot(0), one_hot(0), one_hot(2), one_hot(1)])
            .unwrap();
        assert_eq!(greedy_decode(&m).ids(), &[0, 1]);
        let m = ProbMatrix::from_rows(&[one_hot(2), one_hot(2)]).unwrap();
        assert!(greedy_decode(&m).is_empty());
        let m = ProbMatrix::from_rows(&[one_hot(0), one_hot(2), one_hot(0)]).unwrap();
        assert_eq!(greedy_decode(&m).ids(), &[0, 0]);
    }

    #[test]
    fn two_frame_top_n() {
        let top = top_n_perception(&two_frame(), 2, None);
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].seq.ids(), &[0]);
        assert!((top[0].log_prob - 0.84f64.ln()).abs() < 1e-12);
        assert!(top[1].seq.is_empty());
        assert!((top[1].log_prob - 0.16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn brute_force_mass_and_overflow() {
        let m = two_frame();
        let all = brute_force_rank(&m, 100).unwrap();
        // "" and "a"; "aa" needs three frames
        assert_eq!(all.len(), 2);
        let mass: f64 = all.iter().map(|s| s.log_prob.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        let big = ProbMatrix::from_logits(20, 3, &[0.0; 60]).unwrap();
        assert!(matches!(brute_force_rank(&big, 1), Err(Error::TooLarge(_))));
    }

    #[test]
    fn top_one_dominates_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let m = random_matrix(&mut rng, 6, 4);
            let best = &top_n_perception(&m, 1, Some(8))[0];
            let g = ctc_log_posterior(&m, &greedy_decode(&m));
            assert!(best.log_prob >= g - 1e-12);
        }
    }

    proptest! {
        #[test]
        fn posteriors_sum_to_one(seed in any::<u64>(), frames in 1usize..=4, vocab in 1usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, frames, vocab + 1);
            let lps: Vec<f64> = enumerate_sequences(vocab, frames)
                .iter()
                .map(|y| ctc_log_posterior(&m, y))
                .collect();
            prop_assert!((log_sum_exp(&lps).exp() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn exhaustive_prefix_search_matches_brute_force(
            seed in any::<u64>(), frames in 1usize..=4, vocab in 1usize..=3, n in 1usize..20,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, frames, vocab + 1);
            let fast = top_n_perception(&m, n, None);
            let slow = brute_force_rank(&m, n).unwrap();
            prop_assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert_eq!(&a.seq, &b.seq);
                prop_assert!((a.log_prob - b.log_prob).abs() <= 1e-9);
            }
        }

        #[test]
        fn pruned_output_is_sorted_and_unique(seed in any::<u64>(), frames in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, frames, 5);
            let out = top_n_perception(&m, 6, Some(12));
            for w in out.windows(2) {
                prop_assert!(w[0].log_prob >= w[1].log_prob);
                prop_assert_ne!(&w[0].seq, &w[1].seq);
            }
            let mut seqs: Vec<_> = out.iter().map(|s| s.seq.clone()).collect();
            seqs.sort();
            seqs.dedup();
            prop_assert_eq!(seqs.len(), out.len());
        }

        #[test]
        fn no_underflow_on_long_inputs(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, 64, 4);
            let y = LabelSequence::new((0..20).map(|i| i % 3).collect());
            let lp = ctc_log_posterior(&m, &y);
            prop_assert!(lp.is_finite());
        }
    }
}
