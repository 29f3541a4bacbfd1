//! A small recurrent recognizer with a CTC head and an autoregressive head.
//!
//! Encoder: `u_t = tanh(W_in x_t + b_in)`, `h_t = tanh(W_mix u_t + W_rec h_{t-1} + b_h)`.
//! CTC head: per-frame affine map to `V + 1` classes, blank last.
//! Autoregressive head: `s_j = tanh(A s_{j-1} + E[prev_j] + C h_T + c)` with
//! logits `W_o s_j + U[prev_j] + b_o` over `V` tokens plus end-of-sequence.
//! The previous-token index `V` stands for start-of-sequence.

mod mining;
mod train;

pub use mining::{mine_similar_sets, mine_similar_sets_with_beam, MinedCache};
pub use train::{
    evaluate, gradient_check, sample_loss_and_grad, train, train_with_remining, EpochLog,
    LrSchedule, Method, TrainConfig, TrainLog,
};

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::{
    ctc_log_posterior, greedy_decode_with_probs, top_n_perception, ProbMatrix,
};
use crate::math::{argmax, log_softmax_into, mix_seed};
use crate::metrics::PredictionRecord;
use crate::task::{FeatureSequence, LabelSequence, Sample};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Ctc,
    Ar,
}

impl Head {
    pub const ALL: [Head; 2] = [Head::Ctc, Head::Ar];

    pub fn name(self) -> &'static str {
        match self {
            Head::Ctc => "ctc",
            Head::Ar => "ar",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctc" => Ok(Head::Ctc),
            "ar" => Ok(Head::Ar),
            _ => Err(Error::Unknown {
                what: "head",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    /// Encoder state size.
    pub hidden: usize,
    /// Decoder state size of the autoregressive head; unused by CTC.
    pub decoder: usize,
    pub vocab: usize,
}

impl Dims {
    /// Output classes of either head: the tokens plus blank or end-of-sequence.
    pub fn classes(&self) -> usize {
        self.vocab + 1
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w_in: usize,
    b_in: usize,
    w_mix: usize,
    w_rec: usize,
    b_h: usize,
    /// first head parameter; everything after belongs to the head
    head: usize,
    // ctc head
    w_c: usize,
    b_c: usize,
    // ar head
    a: usize,
    emb: usize,
    ctx: usize,
    c: usize,
    w_o: usize,
    u: usize,
    b_o: usize,
    len: usize,
}

impl Layout {
    fn new(d: Dims, head: Head) -> Self {
        let (i, h, c, g) = (d.input, d.hidden, d.classes(), d.decoder);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let w_in = take(h * i);
        let b_in = take(h);
        let w_mix = take(h * h);
        let w_rec = take(h * h);
        let b_h = take(h);
        let mut l = Layout {
            w_in,
            b_in,
            w_mix,
            w_rec,
            b_h,
            head: b_h + h,
            w_c: 0,
            b_c: 0,
            a: 0,
            emb: 0,
            ctx: 0,
            c: 0,
            w_o: 0,
            u: 0,
            b_o: 0,
            len: 0,
        };
        match head {
            Head::Ctc => {
                l.w_c = take(c * h);
                l.b_c = take(c);
            }
            Head::Ar => {
                l.a = take(g * g);
                l.emb = take(c * g);
                l.ctx = take(g * h);
                l.c = take(g);
                l.w_o = take(c * g);
                l.u = take(c * c);
                l.b_o = take(c);
            }
        }
        l.len = at;
        l
    }
}

/// `out += W x` for a row-major `rows x x.len()` matrix.
fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// Four independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += W^T g`.
fn matvec_t_acc(out: &mut [f64], w: &[f64], g: &[f64]) {
    let cols = out.len();
    for (row, &gr) in w.chunks_exact(cols).zip(g) {
        if gr == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * gr;
        }
    }
}

/// `dW += g x^T`.
fn outer_acc(dw: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &gr) in dw.chunks_exact_mut(cols).zip(g) {
        if gr == 0.0 {
            continue;
        }
        for (d, xv) in row.iter_mut().zip(x) {
            *d += gr * xv;
        }
    }
}

pub(crate) struct Encoded {
    frames: usize,
    u: Vec<f64>,
    h: Vec<f64>,
}

impl Encoded {
    fn h(&self, t: usize, hidden: usize) -> &[f64] {
        &self.h[t * hidden..(t + 1) * hidden]
    }

    /// The state the autoregressive decoder is conditioned on.
    fn last(&self, hidden: usize) -> &[f64] {
        self.h(self.frames - 1, hidden)
    }
}

/// Teacher-forced decoder pass.
pub(crate) struct Decoded {
    prevs: Vec<usize>,
    s: Vec<f64>,
    logits: Vec<f64>,
}

/// Output of [`Recognizer::forward`].
#[derive(Debug, Clone, PartialEq)]
pub enum Forward {
    Ctc(ProbMatrix),
    /// Per-position distributions over tokens plus end-of-sequence.
    Ar(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recognizer {
    dims: Dims,
    head: Head,
    params: Vec<f64>,
}

impl Recognizer {
    pub fn zeros(dims: Dims, head: Head) -> Result<Self> {
        if dims.input == 0 || dims.hidden == 0 || dims.vocab == 0 || (head == Head::Ar && dims.decoder == 0) {
            return Err(Error::InvalidArgument(format!("degenerate dimensions {dims:?}")));
        }
        let len = Layout::new(dims, head).len;
        Ok(Self {
            dims,
            head,
            params: vec![0.0; len],
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(dims: Dims, head: Head, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(dims, head)?;
        let l = m.layout();
        let (i, h, c, g) = (dims.input, dims.hidden, dims.classes(), dims.decoder);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x1a17));
        let mut fill = |p: &mut [f64], at: usize, n: usize, fan_in: usize| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p[at..at + n] {
                *v = rng.random_range(-s..s);
            }
        };
        fill(&mut m.params, l.w_in, h * i, i);
        fill(&mut m.params, l.w_mix, h * h, h);
        fill(&mut m.params, l.w_rec, h * h, h);
        match head {
            Head::Ctc => fill(&mut m.params, l.w_c, c * h, h),
            Head::Ar => {
                fill(&mut m.params, l.a, g * g, g);
                fill(&mut m.params, l.emb, c * g, 1);
                fill(&mut m.params, l.ctx, g * h, h);
                fill(&mut m.params, l.w_o, c * g, g);
            }
        }
        Ok(m)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        Layout::new(self.dims, self.head)
    }

    fn expect_head(&self, head: Head) -> Result<()> {
        if head != self.head {
            return Err(Error::HeadMismatch {
                built: self.head.name(),
                requested: head.name(),
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &FeatureSequence) -> Result<()> {
        if x.dim() != self.dims.input {
            return Err(Error::DimensionMismatch {
                expected: self.dims.input,
                got: x.dim(),
            });
        }
        if x.frames() == 0 {
            return Err(Error::Empty("feature sequence"));
        }
        Ok(())
    }

    pub(crate) fn encode(&self, x: &FeatureSequence) -> Encoded {
        let l = self.layout();
        let (i, h) = (self.dims.input, self.dims.hidden);
        let p = &self.params;
        let frames = x.frames();
        let mut u = vec![0.0; frames * h];
        let mut hs = vec![0.0; frames * h];
        for t in 0..frames {
            let ut = &mut u[t * h..(t + 1) * h];
            ut.copy_from_slice(&p[l.b_in..l.b_in + h]);
            matvec_acc(ut, &p[l.w_in..l.w_in + h * i], x.frame(t));
            ut.iter_mut().for_each(|v| *v = v.tanh());
            let mut a = p[l.b_h..l.b_h + h].to_vec();
            matvec_acc(&mut a, &p[l.w_mix..l.w_mix + h * h], &u[t * h..(t + 1) * h]);
            if t > 0 {
                matvec_acc(&mut a, &p[l.w_rec..l.w_rec + h * h], &hs[(t - 1) * h..t * h]);
            }
            for (dst, v) in hs[t * h..(t + 1) * h].iter_mut().zip(a) {
                *dst = v.tanh();
            }
        }
        Encoded { frames, u, h: hs }
    }

    /// Backpropagation through time. `dh` holds the loss gradient w.r.t. every
    /// `h_t`.
    pub(crate) fn encoder_backward(
        &self,
        x: &FeatureSequence,
        enc: &Encoded,
        dh: &[f64],
        grad: &mut [f64],
    ) {
        let l = self.layout();
        let (i, h) = (self.dims.input, self.dims.hidden);
        let p = &self.params;
        let mut carry = vec![0.0; h];
        let mut da = vec![0.0; h];
        let mut dz = vec![0.0; h];
        for t in (0..enc.frames).rev() {
            let ht = enc.h(t, h);
            for k in 0..h {
                da[k] = (dh[t * h + k] + carry[k]) * (1.0 - ht[k] * ht[k]);
            }
            let ut = &enc.u[t * h..(t + 1) * h];
            outer_acc(&mut grad[l.w_mix..l.w_mix + h * h], &da, ut);
            if t > 0 {
                outer_acc(&mut grad[l.w_rec..l.w_rec + h * h], &da, enc.h(t - 1, h));
            }
            for (g, d) in grad[l.b_h..l.b_h + h].iter_mut().zip(&da) {
                *g += d;
            }
            dz.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(&mut dz, &p[l.w_mix..l.w_mix + h * h], &da);
            for k in 0..h {
                dz[k] *= 1.0 - ut[k] * ut[k];
            }
            outer_acc(&mut grad[l.w_in..l.w_in + h * i], &dz, x.frame(t));
            for (g, d) in grad[l.b_in..l.b_in + h].iter_mut().zip(&dz) {
                *g += d;
            }
            carry.iter_mut().for_each(|v| *v = 0.0);
            if t > 0 {
                matvec_t_acc(&mut carry, &p[l.w_rec..l.w_rec + h * h], &da);
            }
        }
    }

    /// CTC logits, `frames x (V + 1)`.
    pub(crate) fn ctc_logits(&self, enc: &Encoded) -> Vec<f64> {
        let l = self.layout();
        let (h, c) = (self.dims.hidden, self.dims.classes());
        let p = &self.params;
        let mut out = Vec::with_capacity(enc.frames * c);
        for t in 0..enc.frames {
            let mut row = p[l.b_c..l.b_c + c].to_vec();
            matvec_acc(&mut row, &p[l.w_c..l.w_c + c * h], enc.h(t, h));
            out.extend(row);
        }
        out
    }

    /// Adds the CTC head's parameter gradient and returns the gradient w.r.t.
    /// every `h_t`.
    pub(crate) fn ctc_head_backward(&self, enc: &Encoded, dlogits: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let l = self.layout();
        let (h, c) = (self.dims.hidden, self.dims.classes());
        let p = &self.params;
        let mut dh = vec![0.0; enc.frames * h];
        for t in 0..enc.frames {
            let g = &dlogits[t * c..(t + 1) * c];
            outer_acc(&mut grad[l.w_c..l.w_c + c * h], g, enc.h(t, h));
            for (a, b) in grad[l.b_c..l.b_c + c].iter_mut().zip(g) {
                *a += b;
            }
            matvec_t_acc(&mut dh[t * h..(t + 1) * h], &p[l.w_c..l.w_c + c * h], g);
        }
        dh
    }

    /// `C ctx + c`, shared by every decoder step.
    pub(crate) fn decoder_bias(&self, ctx: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let (h, g) = (self.dims.hidden, self.dims.decoder);
        let mut b = self.params[l.c..l.c + g].to_vec();
        matvec_acc(&mut b, &self.params[l.ctx..l.ctx + g * h], ctx);
        b
    }

    /// One decoder step from state `prev_s` after emitting `prev`.
    fn decoder_step(&self, bias: &[f64], prev_s: Option<&[f64]>, prev: usize) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout();
        let (h, c) = (self.dims.decoder, self.dims.classes());
        let p = &self.params;
        let mut a = bias.to_vec();
        for (v, e) in a.iter_mut().zip(&p[l.emb + prev * h..l.emb + (prev + 1) * h]) {
            *v += e;
        }
        if let Some(s) = prev_s {
            matvec_acc(&mut a, &p[l.a..l.a + h * h], s);
        }
        a.iter_mut().for_each(|v| *v = v.tanh());
        let mut logits = p[l.b_o..l.b_o + c].to_vec();
        matvec_acc(&mut logits, &p[l.w_o..l.w_o + c * h], &a);
        for (v, u) in logits.iter_mut().zip(&p[l.u + prev * c..l.u + (prev + 1) * c]) {
            *v += u;
        }
        (a, logits)
    }

    /// Teacher-forced pass predicting `targets` (the label followed by
    /// end-of-sequence).
    pub(crate) fn decode_teacher(&self, ctx: &[f64], targets: &[usize]) -> Decoded {
        self.decode_teacher_biased(&self.decoder_bias(ctx), targets)
    }

    pub(crate) fn decode_teacher_biased(&self, bias: &[f64], targets: &[usize]) -> Decoded {
        let (h, c) = (self.dims.decoder, self.dims.classes());
        let bos = self.dims.vocab;
        let n = targets.len();
        let mut prevs = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n * h);
        let mut logits = Vec::with_capacity(n * c);
        for j in 0..n {
            let prev = if j == 0 { bos } else { targets[j - 1] };
            let prev_s = (j > 0).then(|| &s[(j - 1) * h..j * h]);
            let (sj, lj) = self.decoder_step(bias, prev_s, prev);
            prevs.push(prev);
            s.extend(sj);
            logits.extend(lj);
        }
        Decoded { prevs, s, logits }
    }

    /// Backward through the decoder steps of one pass. Adds into `head_grad`
    /// (indexed from the first head parameter) and into `da_sum`, the summed
    /// pre-activation gradient that [`Self::decoder_context_backward`]
    /// turns into context and bias gradients.
    pub(crate) fn decoder_backward(
        &self,
        dec: &Decoded,
        dlogits: &[f64],
        head_grad: &mut [f64],
        da_sum: &mut [f64],
    ) {
        let l = self.layout();
        let off = l.head;
        let (h, c) = (self.dims.decoder, self.dims.classes());
        let p = &self.params;
        let n = dec.prevs.len();
        let mut ds_next = vec![0.0; h];
        let mut da = vec![0.0; h];
        for j in (0..n).rev() {
            let g = &dlogits[j * c..(j + 1) * c];
            let sj = &dec.s[j * h..(j + 1) * h];
            let prev = dec.prevs[j];
            outer_acc(&mut head_grad[l.w_o - off..l.w_o - off + c * h], g, sj);
            for (a, b) in head_grad[l.b_o - off..l.b_o - off + c].iter_mut().zip(g) {
                *a += b;
            }
            let urow = l.u - off + prev * c;
            for (a, b) in head_grad[urow..urow + c].iter_mut().zip(g) {
                *a += b;
            }
            let mut ds = std::mem::replace(&mut ds_next, vec![0.0; h]);
            matvec_t_acc(&mut ds, &p[l.w_o..l.w_o + c * h], g);
            for k in 0..h {
                da[k] = ds[k] * (1.0 - sj[k] * sj[k]);
                da_sum[k] += da[k];
            }
            let erow = l.emb - off + prev * h;
            for (a, b) in head_grad[erow..erow + h].iter_mut().zip(&da) {
                *a += b;
            }
            if j > 0 {
                outer_acc(
                    &mut head_grad[l.a - off..l.a - off + h * h],
                    &da,
                    &dec.s[(j - 1) * h..j * h],
                );
                matvec_t_acc(&mut ds_next, &p[l.a..l.a + h * h], &da);
            }
        }
    }

    /// The context and bias enter every step identically, so their gradients
    /// only need the summed step gradient.
    pub(crate) fn decoder_context_backward(
        &self,
        ctx: &[f64],
        da_sum: &[f64],
        head_grad: &mut [f64],
        dctx: &mut [f64],
    ) {
        let l = self.layout();
        let off = l.head;
        let (h, g) = (self.dims.hidden, self.dims.decoder);
        outer_acc(&mut head_grad[l.ctx - off..l.ctx - off + g * h], da_sum, ctx);
        for (a, b) in head_grad[l.c - off..l.c - off + g].iter_mut().zip(da_sum) {
            *a += b;
        }
        matvec_t_acc(dctx, &self.params[l.ctx..l.ctx + g * h], da_sum);
    }

    pub(crate) fn head_offset(&self) -> usize {
        self.layout().head
    }

    /// Per-frame distributions of the CTC head.
    pub fn ctc_probs(&self, x: &FeatureSequence) -> Result<ProbMatrix> {
        self.expect_head(Head::Ctc)?;
        self.check_input(x)?;
        let enc = self.encode(x);
        ProbMatrix::from_logits(enc.frames, self.dims.classes(), &self.ctc_logits(&enc))
    }

    /// Teacher-forced distributions of the autoregressive head: one row per
    /// token of `y` plus a final end-of-sequence row.
    pub fn ar_distributions(&self, x: &FeatureSequence, y: &LabelSequence) -> Result<Vec<Vec<f64>>> {
        self.expect_head(Head::Ar)?;
        self.check_input(x)?;
        y.validate(self.dims.vocab)?;
        let enc = self.encode(x);
        let targets = ar_targets(y, self.dims.vocab);
        let dec = self.decode_teacher(enc.last(self.dims.hidden), &targets);
        Ok(dec
            .logits
            .chunks(self.dims.classes())
            .map(crate::math::softmax)
            .collect())
    }

    /// Per-step distributions for `head`; the autoregressive head needs a
    /// label to condition on.
    pub fn forward(
        &self,
        x: &FeatureSequence,
        head: Head,
        teacher: Option<&LabelSequence>,
    ) -> Result<Forward> {
        match head {
            Head::Ctc => Ok(Forward::Ctc(self.ctc_probs(x)?)),
            Head::Ar => {
                let y = teacher.ok_or_else(|| {
                    Error::InvalidArgument("autoregressive forward needs a label".into())
                })?;
                Ok(Forward::Ar(self.ar_distributions(x, y)?))
            }
        }
    }

    /// Greedy decoding with its sequence confidence and the probability of
    /// each emitted token.
    ///
    /// The autoregressive decoder stops at end-of-sequence or after as many
    /// tokens as there are frames; the end-of-sequence probability at the
    /// stopping point is always part of the confidence.
    pub fn decode_and_confidence(&self, x: &FeatureSequence) -> Result<(LabelSequence, f64, Vec<f64>)> {
        self.check_input(x)?;
        match self.head {
            Head::Ctc => {
                let m = self.ctc_probs(x)?;
                let (seq, probs) = greedy_decode_with_probs(&m);
                let conf = ctc_log_posterior(&m, &seq).exp();
                Ok((seq, conf, probs))
            }
            Head::Ar => {
                let enc = self.encode(x);
                let (h, c, eos) = (self.dims.hidden, self.dims.classes(), self.dims.vocab);
                let bias = self.decoder_bias(enc.last(h));
                let mut seq = Vec::new();
                let mut probs = Vec::new();
                let mut log_conf = 0.0;
                let mut state: Option<Vec<f64>> = None;
                let mut prev = eos;
                let mut logp = vec![0.0; c];
                loop {
                    let (s, logits) = self.decoder_step(&bias, state.as_deref(), prev);
                    log_softmax_into(&logits, &mut logp);
                    let k = if seq.len() == enc.frames { eos } else { argmax(&logp) };
                    log_conf += logp[k];
                    if k == eos {
                        break;
                    }
                    seq.push(k);
                    probs.push(logp[k].exp());
                    state = Some(s);
                    prev = k;
                }
                Ok((LabelSequence::new(seq), log_conf.exp(), probs))
            }
        }
    }

    /// Best sequence from a prefix beam search of the given width (CTC only).
    pub fn beam_decode(&self, x: &FeatureSequence, width: usize) -> Result<(LabelSequence, f64)> {
        let m = self.ctc_probs(x)?;
        let best = top_n_perception(&m, 1, Some(width));
        let s = best.into_iter().next().ok_or(Error::Empty("beam"))?;
        Ok((s.seq, s.log_prob.exp()))
    }

    /// `P(y | x)` under the model, with no gradient.
    pub fn target_posterior(&self, x: &FeatureSequence, y: &LabelSequence) -> Result<f64> {
        Ok(self.target_log_posterior(x, y)?.exp())
    }

    pub fn target_log_posterior(&self, x: &FeatureSequence, y: &LabelSequence) -> Result<f64> {
        self.check_input(x)?;
        y.validate(self.dims.vocab)?;
        match self.head {
            Head::Ctc => {
                let m = self.ctc_probs(x)?;
                let lp = ctc_log_posterior(&m, y);
                if lp == f64::NEG_INFINITY && y.min_ctc_frames() > x.frames() {
                    return Err(Error::Infeasible {
                        len: y.len(),
                        frames: x.frames(),
                    });
                }
                Ok(lp)
            }
            Head::Ar => {
                let enc = self.encode(x);
                let targets = ar_targets(y, self.dims.vocab);
                let dec = self.decode_teacher(enc.last(self.dims.hidden), &targets);
                let c = self.dims.classes();
                let mut logp = vec![0.0; c];
                let mut total = 0.0;
                for (row, &t) in dec.logits.chunks(c).zip(&targets) {
                    log_softmax_into(row, &mut logp);
                    total += logp[t];
                }
                Ok(total)
            }
        }
    }

    pub fn predict(&self, sample: &Sample) -> Result<PredictionRecord> {
        let (decoded, confidence, probs) = self.decode_and_confidence(&sample.x)?;
        let mut r = PredictionRecord::new(
            sample.id,
            sample.y.clone(),
            decoded,
            confidence,
            sample.hardness,
        );
        r.token_probs = Some(probs);
        Ok(r)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<checkpoint>", e);
        writeln!(
            w,
            "recognizer {} {} {} {} {} {}",
            self.head,
            self.dims.input,
            self.dims.hidden,
            self.dims.decoder,
            self.dims.vocab,
            self.params.len()
        )
        .map_err(io)?;
        for v in &self.params {
            // Debug formatting is the shortest string that parses back exactly
            writeln!(w, "{v:?}").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("checkpoint", "empty file"))?
            .map_err(|e| Error::io("<checkpoint>", e))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 7 || f[0] != "recognizer" {
            return Err(Error::parse("checkpoint", format!("bad header {header:?}")));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::parse("checkpoint", format!("{s:?}: {e}")))
        };
        let head: Head = f[1].parse()?;
        let dims = Dims {
            input: num(f[2])?,
            hidden: num(f[3])?,
            decoder: num(f[4])?,
            vocab: num(f[5])?,
        };
        let count = num(f[6])?;
        let mut m = Self::zeros(dims, head)?;
        if count != m.params.len() {
            return Err(Error::DimensionMismatch {
                expected: m.params.len(),
                got: count,
            });
        }
        let mut read = 0;
        for line in lines {
            let line = line.map_err(|e| Error::io("<checkpoint>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            if read == count {
                return Err(Error::parse("checkpoint", "trailing values"));
            }
            m.params[read] = line
                .trim()
                .parse()
                .map_err(|e| Error::parse("checkpoint", format!("{line:?}: {e}")))?;
            read += 1;
        }
        if read != count {
            return Err(Error::DimensionMismatch {
                expected: count,
                got: read,
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Label tokens followed by end-of-sequence (index `vocab`).
pub(crate) fn ar_targets(y: &LabelSequence, vocab: usize) -> Vec<usize> {
    let mut t = y.0.clone();
    t.push(vocab);
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{synth_dataset, Split, TaskSpec};

    fn dims() -> Dims {
        Dims {
            input: 4,
            hidden: 5,
            decoder: 3,
            vocab: 3,
        }
    }

    fn features(frames: usize, dim: usize, seed: u64) -> FeatureSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureSequence::new(frames, dim, data).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let m = Recognizer::zeros(dims(), Head::Ctc).unwrap();
        let p = m.ctc_probs(&features(5, 4, 1)).unwrap();
        for t in 0..5 {
            for &v in p.row(t) {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_normalized() {
        for head in Head::ALL {
            let m = Recognizer::init(dims(), head, 3).unwrap();
            let x = features(6, 4, 2);
            let y = LabelSequence::new(vec![0, 2, 1]);
            let a = m.forward(&x, head, Some(&y)).unwrap();
            assert_eq!(a, m.forward(&x, head, Some(&y)).unwrap());
            let rows: Vec<Vec<f64>> = match a {
                Forward::Ctc(p) => (0..p.frames()).map(|t| p.row(t).to_vec()).collect(),
                Forward::Ar(r) => r,
            };
            for r in rows {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dimension_and_head_errors() {
        let m = Recognizer::init(dims(), Head::Ctc, 3).unwrap();
        assert!(matches!(
            m.ctc_probs(&features(3, 5, 0)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            m.ar_distributions(&features(3, 4, 0), &LabelSequence::new(vec![0])),
            Err(Error::HeadMismatch { .. })
        ));
        assert!(m.forward(&features(3, 4, 0), Head::Ar, None).is_err());
    }

    #[test]
    fn ar_confidence_equals_target_posterior_of_decoded() {
        for seed in 0..20 {
            let m = Recognizer::init(dims(), Head::Ar, seed).unwrap();
            let x = features(4, 4, seed + 100);
            let (dec, conf, probs) = m.decode_and_confidence(&x).unwrap();
            assert!(dec.len() <= 4);
            assert_eq!(probs.len(), dec.len());
            let p = m.target_posterior(&x, &dec).unwrap();
            assert!((p - conf).abs() <= 1e-12 * conf.max(1e-300), "{p} vs {conf}");
            assert!(conf > 0.0 && conf <= 1.0);
        }
    }

    #[test]
    fn ctc_confidence_is_posterior_of_decoded() {
        for seed in 0..10 {
            let m = Recognizer::init(dims(), Head::Ctc, seed).unwrap();
            let x = features(5, 4, seed);
            let (dec, conf, _) = m.decode_and_confidence(&x).unwrap();
            let p = m.target_posterior(&x, &dec).unwrap();
            assert_eq!(p, conf);
        }
    }

    #[test]
    fn ctc_posterior_matches_loss() {
        let m = Recognizer::init(dims(), Head::Ctc, 9).unwrap();
        let x = features(5, 4, 9);
        let y = LabelSequence::new(vec![1, 1, 2]);
        let enc = m.encode(&x);
        let (loss, _) =
            crate::ctc::ctc_loss_and_grad(&m.ctc_logits(&enc), 5, 4, &y).unwrap();
        let p = m.target_posterior(&x, &y).unwrap();
        assert!((p - (-loss).exp()).abs() < 1e-12);
        let long = LabelSequence::new(vec![0, 0, 0]);
        assert!(matches!(
            m.target_posterior(&features(4, 4, 0), &long),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn uniform_ctc_rows_two_frames() {
        // V=1, T=2, zero weights: ties go to token 0 over blank on both
        // frames, so the decoding is "a".
        let d = Dims {
            input: 2,
            hidden: 2,
            decoder: 0,
            vocab: 1,
        };
        let m = Recognizer::zeros(d, Head::Ctc).unwrap();
        let (dec, conf, _) = m.decode_and_confidence(&features(2, 2, 0)).unwrap();
        assert_eq!(dec.0, vec![0]);
        // paths "a a", "a ∅", "∅ a" out of 4
        assert!((conf - 0.75).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        for head in Head::ALL {
            let m = Recognizer::init(dims(), head, 5).unwrap();
            let mut buf = Vec::new();
            m.write_to(&mut buf).unwrap();
            let back = Recognizer::read_from(buf.as_slice()).unwrap();
            assert_eq!(back, m);
        }
        assert!(Recognizer::read_from("recognizer ctc 1 1 0 1 99\n".as_bytes()).is_err());
    }

    #[test]
    fn predictions_on_generated_data() {
        let spec = TaskSpec::default();
        let d = synth_dataset(&spec, 5, Split::Test).unwrap();
        let m = Recognizer::init(
            Dims {
                input: spec.feature_dim,
                hidden: 8,
                decoder: 0,
                vocab: spec.alphabet_size,
            },
            Head::Ctc,
            1,
        )
        .unwrap();
        for s in &d.samples {
            let r = m.predict(s).unwrap();
            assert_eq!(r.correct, r.decoded == r.target);
            assert!(r.confidence > 0.0 && r.confidence <= 1.0);
        }
    }
}
