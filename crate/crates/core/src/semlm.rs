//! Bidirectional-context language model and semantic candidate search.
//!
//! The model predicts a token from its immediate left and right neighbours
//! (`BOS`/`EOS` at the edges) and never from the token itself, so scoring a
//! position of a sequence is independent of what currently sits there.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::ctc::{rank_order, ScoredSequence};
use crate::task::{LabelSequence, TokenId};
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Order-1 bidirectional count model with add-λ smoothing.
///
/// Context ids use `vocab` for the `BOS` (left) and `EOS` (right) markers.
#[derive(Debug, Clone, PartialEq)]
pub struct BiContextLM {
    vocab: usize,
    lambda: f64,
    counts: BTreeMap<(usize, usize), Vec<u64>>,
}

impl BiContextLM {
    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `P(. | left, right)`; uniform for an unseen context.
    pub fn distribution(&self, left: usize, right: usize) -> Vec<f64> {
        let v = self.vocab as f64;
        match self.counts.get(&(left, right)) {
            None => vec![1.0 / v; self.vocab],
            Some(c) => {
                let total: u64 = c.iter().sum();
                let denom = total as f64 + self.lambda * v;
                c.iter().map(|&k| (k as f64 + self.lambda) / denom).collect()
            }
        }
    }

    /// Writes `bicontext-lm <vocab> <lambda>` followed by one
    /// `<left> <right> <count>...` line per observed context.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<lm>", e);
        writeln!(w, "bicontext-lm {} {:?}", self.vocab, self.lambda).map_err(io)?;
        for (&(l, r), c) in &self.counts {
            let counts: Vec<String> = c.iter().map(u64::to_string).collect();
            writeln!(w, "{} {} {}", l, r, counts.join(" ")).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or(Error::Empty("language model file"))?
            .map_err(|e| Error::io("<lm>", e))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (vocab, lambda) = match parts.as_slice() {
            ["bicontext-lm", v, l] => (
                v.parse::<usize>().map_err(|e| Error::parse("lm header", e))?,
                l.parse::<f64>().map_err(|e| Error::parse("lm header", e))?,
            ),
            _ => return Err(Error::parse("lm header", header)),
        };
        let mut counts = BTreeMap::new();
        for line in lines {
            let line = line.map_err(|e| Error::io("<lm>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let nums = line
                .split_whitespace()
                .map(|s| s.parse::<u64>().map_err(|e| Error::parse("lm counts", e)))
                .collect::<Result<Vec<_>>>()?;
            if nums.len() != vocab + 2 || nums[0] > vocab as u64 || nums[1] > vocab as u64 {
                return Err(Error::parse("lm counts", line));
            }
            counts.insert((nums[0] as usize, nums[1] as usize), nums[2..].to_vec());
        }
        Ok(Self {
            vocab,
            lambda,
            counts,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub fn fit_bicontext_lm(corpus: &[LabelSequence], vocab: usize, lambda: f64) -> Result<BiContextLM> {
    if corpus.is_empty() {
        return Err(Error::Empty("language model corpus"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be > 0")));
    }
    if vocab < 1 {
        return Err(Error::InvalidArgument("vocab must be >= 1".into()));
    }
    let mut counts: BTreeMap<(usize, usize), Vec<u64>> = BTreeMap::new();
    for y in corpus {
        y.validate(vocab)?;
        for (t, &tok) in y.iter().enumerate() {
            let (l, r) = context(y, t, vocab);
            counts.entry((l, r)).or_insert_with(|| vec![0; vocab])[tok] += 1;
        }
    }
    Ok(BiContextLM {
        vocab,
        lambda,
        counts,
    })
}

fn context(y: &[TokenId], t: usize, marker: usize) -> (usize, usize) {
    let l = if t == 0 { marker } else { y[t - 1] };
    let r = y.get(t + 1).copied().unwrap_or(marker);
    (l, r)
}

/// One distribution per position of a target sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionDistributions(pub Vec<Vec<f64>>);

impl PositionDistributions {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Sum over positions of `log P(seq_t)`.
    pub fn log_score(&self, seq: &[TokenId]) -> f64 {
        self.0
            .iter()
            .zip(seq)
            .fold(0.0, |acc, (d, &t)| acc + d[t].ln())
    }
}

/// Position `t` is scored under the context `(y[t-1], y[t+1])`.
pub fn position_distributions(lm: &BiContextLM, y: &LabelSequence) -> Result<PositionDistributions> {
    if y.is_empty() {
        return Err(Error::Empty("sequence for position distributions"));
    }
    y.validate(lm.vocab)?;
    Ok(PositionDistributions(
        (0..y.len())
            .map(|t| {
                let (l, r) = context(y, t, lm.vocab);
                lm.distribution(l, r)
            })
            .collect(),
    ))
}

/// Same-length candidates ranked by the product of per-position
/// probabilities in `y`'s bidirectional contexts.
pub fn top_n_semantic(lm: &BiContextLM, y: &LabelSequence, n: usize) -> Result<Vec<ScoredSequence>> {
    let dists = position_distributions(lm, y)?;
    Ok(top_n_product(&dists.0, n))
}

#[derive(Debug)]
struct Partial {
    /// Score of the best completion; exact for completed entries.
    bound: f64,
    prefix: Vec<TokenId>,
    score: f64,
}

impl PartialEq for Partial {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Partial {}

impl PartialOrd for Partial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Partial {
    // Max-heap: higher bound first, then lexicographically smaller prefix.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.prefix.cmp(&self.prefix))
    }
}

/// Exact top-`n` assignments of a product of independent categorical
/// distributions, best first, ties broken by token order.
///
/// Best-first search over prefixes: each heap entry's priority is its prefix
/// score plus the per-position maxima of the remaining positions, accumulated
/// in the same order as a full score so that bounds never overshoot in
/// floating point. Zero-probability options are never emitted.
pub fn top_n_product(dists: &[Vec<f64>], n: usize) -> Vec<ScoredSequence> {
    let len = dists.len();
    let logs: Vec<Vec<f64>> = dists
        .iter()
        .map(|d| d.iter().map(|p| p.ln()).collect())
        .collect();
    let best: Vec<f64> = logs
        .iter()
        .map(|l| l.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let bound_of = |depth: usize, score: f64| best[depth..].iter().fold(score, |acc, &b| acc + b);

    let mut out = Vec::new();
    if n == 0 || best.iter().any(|&b| b == f64::NEG_INFINITY) {
        return out;
    }
    let mut heap = BinaryHeap::new();
    heap.push(Partial {
        bound: bound_of(0, 0.0),
        prefix: Vec::new(),
        score: 0.0,
    });
    while let Some(p) = heap.pop() {
        let depth = p.prefix.len();
        if depth == len {
            out.push(ScoredSequence::new(p.prefix, p.score));
            if out.len() == n {
                break;
            }
            continue;
        }
        for (tok, &lp) in logs[depth].iter().enumerate() {
            if lp == f64::NEG_INFINITY {
                continue;
            }
            let score = p.score + lp;
            let mut prefix = p.prefix.clone();
            prefix.push(tok);
            heap.push(Partial {
                bound: bound_of(depth + 1, score),
                prefix,
                score,
            });
        }
    }
    out
}

/// `exp(-(1/|y|) Σ_t log P(y_t | y_{t-1}, y_{t+1}))`.
pub fn perplexity(lm: &BiContextLM, y: &LabelSequence) -> Result<f64> {
    let dists = position_distributions(lm, y)?;
    Ok((-dists.log_score(y) / y.len() as f64).exp())
}

/// Exhaustive ranking over every same-length sequence (test oracle).
pub fn brute_force_product(dists: &[Vec<f64>], n: usize) -> Vec<ScoredSequence> {
    let vocab = dists.first().map_or(0, Vec::len);
    let mut all = vec![(Vec::<TokenId>::new(), 0.0f64)];
    for d in dists {
        let mut next = Vec::with_capacity(all.len() * vocab);
        for (seq, score) in &all {
            for (t, &p) in d.iter().enumerate() {
                let mut s = seq.clone();
                s.push(t);
                next.push((s, score + p.ln()));
            }
        }
        all = next;
    }
    let mut scored: Vec<ScoredSequence> = all
        .into_iter()
        .filter(|(_, s)| *s > f64::NEG_INFINITY)
        .map(|(s, lp)| ScoredSequence::new(s, lp))
        .collect();
    scored.sort_by(rank_order);
    scored.truncate(n);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(ids: &[usize]) -> LabelSequence {
        LabelSequence::new(ids.to_vec())
    }

    #[test]
    fn single_observation_dominates_as_lambda_vanishes() {
        let corpus = vec![seq(&[0, 1]); 5];
        let lm = fit_bicontext_lm(&corpus, 3, 1e-9).unwrap();
        let d = lm.distribution(3, 1);
        assert!(d[0] > 1.0 - 1e-8);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let lm = fit_bicontext_lm(&[seq(&[0, 1])], 4, 0.1).unwrap();
        assert_eq!(lm.distribution(2, 2), vec![0.25; 4]);
    }

    #[test]
    fn count_arithmetic() {
        // "ab" x3, "cb" x1 with a=0, b=1, c=2
        let mut corpus = vec![seq(&[0, 1]); 3];
        corpus.push(seq(&[2, 1]));
        let lm = fit_bicontext_lm(&corpus, 3, 1.0).unwrap();
        let d = lm.distribution(3, 1);
        assert!((d[0] - 4.0 / 7.0).abs() < 1e-12);
        assert!((d[2] - 2.0 / 7.0).abs() < 1e-12);
        assert!((d[1] - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert!(fit_bicontext_lm(&[], 3, 0.1).is_err());
        assert!(fit_bicontext_lm(&[seq(&[0])], 3, 0.0).is_err());
    }

    #[test]
    fn single_token_uses_bos_eos_context() {
        let lm = fit_bicontext_lm(&[seq(&[1]), seq(&[1]), seq(&[0, 2])], 3, 0.5).unwrap();
        let d = position_distributions(&lm, &seq(&[2])).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.0[0], lm.distribution(3, 3));
    }

    #[test]
    fn position_ignores_own_token() {
        let corpus = vec![seq(&[0, 1, 2]), seq(&[2, 1, 0]), seq(&[0, 0, 2])];
        let lm = fit_bicontext_lm(&corpus, 3, 0.1).unwrap();
        let a = position_distributions(&lm, &seq(&[0, 1, 2])).unwrap();
        let b = position_distributions(&lm, &seq(&[0, 2, 2])).unwrap();
        assert_eq!(a.0[1], b.0[1]);
    }

    #[test]
    fn dominant_sequence_maximizes_product() {
        let mut corpus = vec![seq(&[1, 3, 2]); 20];
        corpus.push(seq(&[0, 3, 2]));
        corpus.push(seq(&[1, 1, 1]));
        let lm = fit_bicontext_lm(&corpus, 4, 0.1).unwrap();
        let y = seq(&[1, 3, 2]);
        let dists = position_distributions(&lm, &y).unwrap();
        let own = dists.log_score(&y);
        for cand in crate::ctc::enumerate_sequences(4, 3).iter().filter(|c| c.len() == 3) {
            assert!(dists.log_score(cand) <= own + 1e-12);
        }
    }

    #[test]
    fn product_worked_example() {
        // position 0 over {a, b}, position 1 over {c, d}; V = 4
        let dists = vec![vec![0.7, 0.3, 0.0, 0.0], vec![0.0, 0.0, 0.9, 0.1]];
        let top = top_n_product(&dists, 2);
        assert_eq!(top[0].seq.ids(), &[0, 2]);
        assert!((top[0].log_prob - 0.63f64.ln()).abs() < 1e-12);
        assert_eq!(top[1].seq.ids(), &[1, 2]);
        assert!((top[1].log_prob - 0.27f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn top_one_is_positionwise_argmax() {
        let corpus = vec![seq(&[0, 1, 2]), seq(&[0, 1, 2]), seq(&[2, 1, 0])];
        let lm = fit_bicontext_lm(&corpus, 3, 0.2).unwrap();
        let y = seq(&[2, 2, 2]);
        let dists = position_distributions(&lm, &y).unwrap();
        let top = top_n_semantic(&lm, &y, 1).unwrap();
        let argmax: Vec<usize> = dists.0.iter().map(|d| crate::math::argmax(d)).collect();
        assert_eq!(top[0].seq.ids(), argmax.as_slice());
    }

    #[test]
    fn exhaustive_semantic_mass_is_one() {
        let corpus = vec![seq(&[0, 1, 2]), seq(&[1, 1, 0])];
        let lm = fit_bicontext_lm(&corpus, 3, 0.3).unwrap();
        let top = top_n_semantic(&lm, &seq(&[0, 1, 2]), 27).unwrap();
        assert_eq!(top.len(), 27);
        let mass: f64 = top.iter().map(|s| s.log_prob.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_ties_follow_token_order() {
        let dists = vec![vec![0.25; 4]; 3];
        let top = top_n_product(&dists, 5);
        let want: Vec<Vec<usize>> = vec![
            vec![0, 0, 0],
            vec![0, 0, 1],
            vec![0, 0, 2],
            vec![0, 0, 3],
            vec![0, 1, 0],
        ];
        let got: Vec<Vec<usize>> = top.iter().map(|s| s.seq.0.clone()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn perplexity_cases() {
        let lm = fit_bicontext_lm(&[seq(&[0, 1])], 2, 1.0).unwrap();
        assert!((perplexity(&lm, &seq(&[0, 1])).unwrap() - 1.5).abs() < 1e-12);

        let lm = fit_bicontext_lm(&[seq(&[0])], 10, 1.0).unwrap();
        assert!((perplexity(&lm, &seq(&[4, 7, 7])).unwrap() - 10.0).abs() < 1e-9);

        let lm = fit_bicontext_lm(&vec![seq(&[3, 1, 4]); 10], 5, 1e-9).unwrap();
        assert!((perplexity(&lm, &seq(&[3, 1, 4])).unwrap() - 1.0).abs() < 1e-6);
        assert!(perplexity(&lm, &LabelSequence::empty()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let corpus = vec![seq(&[0, 1, 2]), seq(&[2, 2]), seq(&[1])];
        let lm = fit_bicontext_lm(&corpus, 3, 0.1).unwrap();
        let mut buf = Vec::new();
        lm.write_to(&mut buf).unwrap();
        assert_eq!(BiContextLM::read_from(buf.as_slice()).unwrap(), lm);
    }

    proptest! {
        #[test]
        fn best_first_matches_exhaustive(seed in any::<u64>(), vocab in 1usize..=4, len in 1usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let corpus: Vec<LabelSequence> = (0..6)
                .map(|_| {
                    let l = rng.random_range(1..=4);
                    LabelSequence::new((0..l).map(|_| rng.random_range(0..vocab)).collect())
                })
                .collect();
            let lm = fit_bicontext_lm(&corpus, vocab, rng.random_range(0.05..1.0)).unwrap();
            let y = LabelSequence::new((0..len).map(|_| rng.random_range(0..vocab)).collect());
            let dists = position_distributions(&lm, &y).unwrap();
            let n = vocab.pow(len as u32);
            let fast = top_n_semantic(&lm, &y, n).unwrap();
            let slow = brute_force_product(&dists.0, n);
            prop_assert_eq!(fast, slow);
        }

        #[test]
        fn perplexity_is_pure(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let corpus: Vec<LabelSequence> = (0..5)
                .map(|_| LabelSequence::new((0..3).map(|_| rng.random_range(0..4)).collect()))
                .collect();
            let lm = fit_bicontext_lm(&corpus, 4, 0.1).unwrap();
            let a = perplexity(&lm, &corpus[0]).unwrap();
            let b = perplexity(&lm, &corpus[0]).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a >= 1.0);
        }
    }
}
