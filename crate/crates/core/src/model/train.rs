use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ar_targets, mine_similar_sets, Decoded, Dims, Head, MinedCache, Recognizer};
use crate::ctc::ctc_loss_grad_from_log_probs;
use crate::losses::{
    baseline_loss, pssr_total_loss, BaselineHyper, BaselineKind, PssrConfig, SimilarSet,
};
use crate::math::{log_softmax_into, mix_seed};
use crate::metrics::{calibration_report, BinScheme, PredictionRecord, DEFAULT_BINS};
use crate::semlm::BiContextLM;
use crate::task::{Dataset, FeatureSequence, LabelSequence};
use crate::{Error, Result};

/// Training objective. Everything except `Pssr` is a plain baseline; under
/// the CTC head only `Nll` (the CTC loss itself) and `Pssr` apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nll,
    Ls,
    Focal,
    Er,
    Brier,
    Pssr,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Nll,
        Method::Ls,
        Method::Focal,
        Method::Er,
        Method::Brier,
        Method::Pssr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nll => "nll",
            Method::Ls => "ls",
            Method::Focal => "focal",
            Method::Er => "er",
            Method::Brier => "brier",
            Method::Pssr => "pssr",
        }
    }

    /// Per-token loss used for the target (and, under PSSR, every similar
    /// sequence).
    pub fn base_kind(self) -> BaselineKind {
        match self {
            Method::Nll | Method::Pssr => BaselineKind::Nll,
            Method::Ls => BaselineKind::Ls,
            Method::Focal => BaselineKind::Focal,
            Method::Er => BaselineKind::Er,
            Method::Brier => BaselineKind::Brier,
        }
    }

    pub fn supports(self, head: Head) -> bool {
        head == Head::Ar || matches!(self, Method::Nll | Method::Pssr)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Unknown {
                what: "method",
                name: s.to_string(),
            })
    }
}

/// Per-epoch learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// `lr * (1 + cos(pi * epoch / epochs)) / 2`.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = epoch as f64 / epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub head: Head,
    pub method: Method,
    pub pssr: PssrConfig,
    pub hyper: BaselineHyper,
    /// Encoder state size.
    pub hidden: usize,
    /// Decoder state size (autoregressive head only).
    pub decoder_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate.
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    /// 0 gives plain SGD.
    pub momentum: f64,
    /// Global gradient-norm clip per batch; 0 disables it.
    pub clip: f64,
    pub seed: u64,
    /// Re-mine similar sets every this many epochs; 0 mines once up front.
    pub remine_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            head: Head::Ctc,
            method: Method::Nll,
            pssr: PssrConfig::default(),
            hyper: BaselineHyper::default(),
            hidden: 64,
            decoder_hidden: 32,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            schedule: LrSchedule::Constant,
            momentum: 0.9,
            clip: 5.0,
            seed: 0,
            remine_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 || self.decoder_hidden == 0 {
            return Err(Error::InvalidArgument("batch size and hidden size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.clip >= 0.0) {
            return Err(Error::InvalidArgument(
                "momentum must be in [0, 1) and clip >= 0".into(),
            ));
        }
        if !self.method.supports(self.head) {
            return Err(Error::InvalidArgument(format!(
                "method {} is not available for the {} head",
                self.method, self.head
            )));
        }
        self.pssr.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_ece: Option<f64>,
    /// Similar sequences dropped because the model cannot emit them.
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub param_count: usize,
    pub epochs: Vec<EpochLog>,
}

struct LossOut {
    loss: f64,
    skipped: usize,
}

/// Loss of one sample under `method`; its parameter gradient is added into
/// `grad`. `p_fixed` replaces the model's own target posterior in the
/// modulating factor (used to hold it constant under finite differences).
#[allow(clippy::too_many_arguments)]
pub fn sample_loss_and_grad(
    model: &Recognizer,
    x: &FeatureSequence,
    y: &LabelSequence,
    method: Method,
    pssr: &PssrConfig,
    hyper: &BaselineHyper,
    set: Option<&SimilarSet>,
    p_fixed: Option<f64>,
    grad: &mut [f64],
) -> Result<f64> {
    Ok(loss_impl(model, x, y, method, pssr, hyper, set, p_fixed, grad)?.loss)
}

#[allow(clippy::too_many_arguments)]
fn loss_impl(
    model: &Recognizer,
    x: &FeatureSequence,
    y: &LabelSequence,
    method: Method,
    pssr: &PssrConfig,
    hyper: &BaselineHyper,
    set: Option<&SimilarSet>,
    p_fixed: Option<f64>,
    grad: &mut [f64],
) -> Result<LossOut> {
    model.check_input(x)?;
    y.validate(model.dims.vocab)?;
    if !method.supports(model.head) {
        return Err(Error::InvalidArgument(format!(
            "method {method} is not available for the {} head",
            model.head
        )));
    }
    let empty = SimilarSet::empty(0);
    let set = match set {
        Some(s) if method == Method::Pssr => s,
        _ => &empty,
    };
    match model.head {
        Head::Ctc => ctc_loss(model, x, y, method, pssr, set, p_fixed, grad),
        Head::Ar => ar_loss(model, x, y, method, pssr, hyper, set, p_fixed, grad),
    }
}

#[allow(clippy::too_many_arguments)]
fn ctc_loss(
    model: &Recognizer,
    x: &FeatureSequence,
    y: &LabelSequence,
    method: Method,
    pssr: &PssrConfig,
    set: &SimilarSet,
    p_fixed: Option<f64>,
    grad: &mut [f64],
) -> Result<LossOut> {
    let c = model.dims.classes();
    let enc = model.encode(x);
    let logits = model.ctc_logits(&enc);
    let mut log_probs = vec![0.0; logits.len()];
    for (src, dst) in logits.chunks(c).zip(log_probs.chunks_mut(c)) {
        log_softmax_into(src, dst);
    }
    let frames = enc.frames;
    let base = |seq: &LabelSequence| ctc_loss_grad_from_log_probs(&log_probs, frames, c, seq);
    let infeasible = || Error::Infeasible {
        len: y.len(),
        frames,
    };
    let (loss, dlogits, skipped) = if method == Method::Pssr {
        let p = match p_fixed {
            Some(p) => p,
            None => (-base(y).ok_or_else(infeasible)?.0).exp(),
        };
        let out = pssr_total_loss(base, y, set, p, pssr)?;
        (out.total, out.grad, out.skipped)
    } else {
        let (l, g) = base(y).ok_or_else(infeasible)?;
        (l, g, 0)
    };
    let dh = model.ctc_head_backward(&enc, &dlogits, grad);
    model.encoder_backward(x, &enc, &dh, grad);
    Ok(LossOut { loss, skipped })
}

#[allow(clippy::too_many_arguments)]
fn ar_loss(
    model: &Recognizer,
    x: &FeatureSequence,
    y: &LabelSequence,
    method: Method,
    pssr: &PssrConfig,
    hyper: &BaselineHyper,
    set: &SimilarSet,
    p_fixed: Option<f64>,
    grad: &mut [f64],
) -> Result<LossOut> {
    let (h, c, vocab) = (model.dims.hidden, model.dims.classes(), model.dims.vocab);
    let enc = model.encode(x);
    let ctx = enc.last(h).to_vec();
    let bias = model.decoder_bias(&ctx);
    let off = model.head_offset();
    let kind = method.base_kind();

    // Every pass is kept so the backward can run once the regularizer weight
    // is known; the gradients handed to the combiner stay empty.
    let mut passes: Vec<(Decoded, Vec<f64>)> = Vec::new();
    let mut base = |seq: &LabelSequence| -> Option<(f64, Vec<f64>)> {
        let targets = ar_targets(seq, vocab);
        let dec = model.decode_teacher_biased(&bias, &targets);
        let (loss, dlogits) = baseline_loss(kind, &dec.logits, c, &targets, hyper).ok()?;
        passes.push((dec, dlogits));
        Some((loss, Vec::new()))
    };
    let (loss, weight, skipped) = if method == Method::Pssr {
        let p = match p_fixed {
            Some(p) => p,
            None => model.target_log_posterior_encoded(&enc, y).exp(),
        };
        let out = pssr_total_loss(&mut base, y, set, p, pssr)?;
        (out.total, out.weight, out.skipped)
    } else {
        let (l, _) = base(y).ok_or_else(|| Error::InvalidArgument("invalid target".into()))?;
        (l, 0.0, 0)
    };
    let mut da_sum = vec![0.0; model.dims.decoder];
    let head_grad = &mut grad[off..];
    for (i, (dec, mut dlogits)) in passes.into_iter().enumerate() {
        if i > 0 {
            if weight == 0.0 {
                break;
            }
            dlogits.iter_mut().for_each(|g| *g *= weight);
        }
        model.decoder_backward(&dec, &dlogits, head_grad, &mut da_sum);
    }
    let mut dh = vec![0.0; enc.frames * h];
    model.decoder_context_backward(&ctx, &da_sum, head_grad, &mut dh[(enc.frames - 1) * h..]);
    model.encoder_backward(x, &enc, &dh, grad);
    Ok(LossOut { loss, skipped })
}

impl Recognizer {
    pub(crate) fn target_log_posterior_encoded(&self, enc: &super::Encoded, y: &LabelSequence) -> f64 {
        let c = self.dims.classes();
        let targets = ar_targets(y, self.dims.vocab);
        let dec = self.decode_teacher(enc.last(self.dims.hidden), &targets);
        let mut logp = vec![0.0; c];
        let mut total = 0.0;
        for (row, &t) in dec.logits.chunks(c).zip(&targets) {
            log_softmax_into(row, &mut logp);
            total += logp[t];
        }
        total
    }
}

/// Greedy predictions with confidences for every sample.
pub fn evaluate(model: &Recognizer, data: &Dataset) -> Result<Vec<PredictionRecord>> {
    data.samples.iter().map(|s| model.predict(s)).collect()
}

fn check_coverage(data: &Dataset, mined: &MinedCache) -> Result<()> {
    match data.samples.iter().find(|s| mined.get(s.id).is_none()) {
        Some(s) => Err(Error::MissingMined(s.id)),
        None => Ok(()),
    }
}

/// Minibatch SGD with momentum on the configured objective.
///
/// `val`, when given, is evaluated after every epoch for the log. Training
/// is a pure function of its inputs.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    val: Option<&Dataset>,
    mined: Option<&MinedCache>,
) -> Result<(Recognizer, TrainLog)> {
    train_with_remining(cfg, data, val, mined, None)
}

/// [`train`], additionally refreshing the perception candidates with the
/// model being trained every `cfg.remine_every` epochs. Only a CTC model is
/// free of linguistic context, so refreshing requires the CTC head.
pub fn train_with_remining(
    cfg: &TrainConfig,
    data: &Dataset,
    val: Option<&Dataset>,
    mined: Option<&MinedCache>,
    lm: Option<&BiContextLM>,
) -> Result<(Recognizer, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut owned_cache;
    let mut cache = None;
    if cfg.method == Method::Pssr {
        let m = mined.ok_or(Error::MissingMined(data.samples[0].id))?;
        check_coverage(data, m)?;
        cache = Some(m);
    } else if mined.is_some() {
        log::warn!("similar sets given to a {} run are ignored", cfg.method);
    }
    let remine = cfg.method == Method::Pssr && cfg.remine_every > 0;
    if remine && (cfg.head != Head::Ctc || lm.is_none()) {
        return Err(Error::InvalidArgument(
            "re-mining needs the ctc head and a language model".into(),
        ));
    }

    let dims = Dims {
        input: data.spec.feature_dim,
        hidden: cfg.hidden,
        decoder: cfg.decoder_hidden,
        vocab: data.spec.alphabet_size,
    };
    let mut model = Recognizer::init(dims, cfg.head, cfg.seed)?;
    let n_params = model.param_count();
    let mut log = TrainLog {
        param_count: n_params,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    log::debug!("{} {} model with {n_params} parameters", cfg.head, cfg.method);
    let mut velocity = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        if remine && epoch > 0 && epoch % cfg.remine_every == 0 {
            owned_cache = mine_similar_sets(&model, lm.expect("checked above"), data, &cfg.pssr)?;
            cache = Some(&owned_cache);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1 + epoch as u64));
        order.shuffle(&mut rng);
        let lr = cfg.schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        let mut total = 0.0;
        let mut skipped = 0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let s = &data.samples[i];
                let set = cache.and_then(|c| c.get(s.id));
                let out = loss_impl(
                    &model, &s.x, &s.y, cfg.method, &cfg.pssr, &cfg.hyper, set, None, &mut grad,
                )?;
                total += out.loss;
                skipped += out.skipped;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut norm = 0.0;
            for g in grad.iter_mut() {
                *g *= scale;
                norm += *g * *g;
            }
            let norm = norm.sqrt();
            let clip = if cfg.clip > 0.0 && norm > cfg.clip {
                cfg.clip / norm
            } else {
                1.0
            };
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - lr * clip * g;
                *p += *v;
            }
        }
        let (val_accuracy, val_ece) = match val {
            Some(v) if !v.is_empty() => {
                let r = calibration_report(&evaluate(&model, v)?, DEFAULT_BINS, BinScheme::EqualWidth)?;
                (Some(r.accuracy), Some(r.ece))
            }
            _ => (None, None),
        };
        let e = EpochLog {
            epoch: epoch + 1,
            train_loss: total / data.len() as f64,
            val_accuracy,
            val_ece,
            skipped,
        };
        log::info!(
            "{} {} epoch {}: loss {:.4}{}",
            cfg.head,
            cfg.method,
            e.epoch,
            e.train_loss,
            match (val_accuracy, val_ece) {
                (Some(a), Some(c)) => format!(", val acc {a:.3}, val ece {c:.4}"),
                _ => String::new(),
            }
        );
        log.epochs.push(e);
    }
    Ok((model, log))
}

/// Worst relative error between the analytic parameter gradient and central
/// finite differences (step `1e-5`). Under PSSR the modulating factor is
/// held at its unperturbed value.
pub fn gradient_check(
    model: &Recognizer,
    x: &FeatureSequence,
    y: &LabelSequence,
    method: Method,
    pssr: &PssrConfig,
    hyper: &BaselineHyper,
    set: Option<&SimilarSet>,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    if model.param_count() > 2000 {
        return Err(Error::TooLarge(model.param_count() as u128));
    }
    let p = if method == Method::Pssr {
        Some(model.target_posterior(x, y)?)
    } else {
        None
    };
    let mut analytic = vec![0.0; model.param_count()];
    loss_impl(model, x, y, method, pssr, hyper, set, p, &mut analytic)?;
    let mut probe = model.clone();
    let mut scratch = vec![0.0; model.param_count()];
    let mut worst: f64 = 0.0;
    for i in 0..model.param_count() {
        let orig = probe.params[i];
        probe.params[i] = orig + STEP;
        let up = loss_impl(&probe, x, y, method, pssr, hyper, set, p, &mut scratch)?.loss;
        probe.params[i] = orig - STEP;
        let down = loss_impl(&probe, x, y, method, pssr, hyper, set, p, &mut scratch)?.loss;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-5);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::ScoredSequence;
    use crate::task::{synth_dataset, Split, TaskSpec};
    use rand::Rng;

    fn tiny_spec() -> TaskSpec {
        TaskSpec {
            seed: 4,
            ..TaskSpec::default()
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(LrSchedule::Constant.rate(0.1, 7, 10), 0.1);
        assert!((LrSchedule::Cosine.rate(0.1, 0, 10) - 0.1).abs() < 1e-15);
        assert!((LrSchedule::Cosine.rate(0.1, 5, 10) - 0.05).abs() < 1e-15);
        assert!(LrSchedule::Cosine.rate(0.1, 10, 10).abs() < 1e-15);
    }

    fn small_cfg(head: Head, method: Method) -> TrainConfig {
        TrainConfig {
            head,
            method,
            hidden: 6,
            decoder_hidden: 5,
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    fn random_model(head: Head, seed: u64) -> (Recognizer, FeatureSequence) {
        let dims = Dims {
            input: 3,
            hidden: 4,
            decoder: 3,
            vocab: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Recognizer::init(dims, head, seed).unwrap();
        for p in m.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let frames = 6;
        let data = (0..frames * 3).map(|_| rng.random_range(-1.5..1.5)).collect();
        (m, FeatureSequence::new(frames, 3, data).unwrap())
    }

    fn similar(seqs: &[&[usize]]) -> SimilarSet {
        SimilarSet {
            sample_id: 0,
            perception: seqs
                .iter()
                .map(|s| ScoredSequence::new(s.to_vec(), -1.0))
                .collect(),
            semantic: vec![ScoredSequence::new(vec![2, 2], -2.0)],
        }
    }

    #[test]
    fn finite_differences_every_method() {
        let y = LabelSequence::new(vec![0, 1, 1]);
        let set = similar(&[&[0, 1], &[2, 1, 1]]);
        let pssr = PssrConfig {
            normalize_reg: false,
            ..PssrConfig::default()
        };
        for head in Head::ALL {
            for method in Method::ALL.into_iter().filter(|m| m.supports(head)) {
                for seed in 0..3 {
                    let (m, x) = random_model(head, seed);
                    let err = gradient_check(
                        &m,
                        &x,
                        &y,
                        method,
                        &pssr,
                        &BaselineHyper::default(),
                        Some(&set),
                    )
                    .unwrap();
                    assert!(err <= 1e-4, "{head} {method} seed {seed}: {err}");
                }
            }
        }
    }

    #[test]
    fn gradients_change_when_logits_scale() {
        let (m, x) = random_model(Head::Ar, 1);
        let y = LabelSequence::new(vec![2, 0]);
        let mut g1 = vec![0.0; m.param_count()];
        sample_loss_and_grad(&m, &x, &y, Method::Nll, &PssrConfig::default(), &BaselineHyper::default(), None, None, &mut g1).unwrap();
        let mut m2 = m.clone();
        for p in m2.params_mut() {
            *p *= 2.0;
        }
        let mut g2 = vec![0.0; m.param_count()];
        sample_loss_and_grad(&m2, &x, &y, Method::Nll, &PssrConfig::default(), &BaselineHyper::default(), None, None, &mut g2).unwrap();
        assert_ne!(g1, g2);
    }

    #[test]
    fn ctc_head_rejects_token_baselines() {
        let cfg = small_cfg(Head::Ctc, Method::Focal);
        assert!(cfg.validate().is_err());
        assert!("adam".parse::<Method>().is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let d = synth_dataset(&tiny_spec(), 10, Split::Train).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg(Head::Ar, Method::Nll)
        };
        let (m, log) = train(&cfg, &d, None, None).unwrap();
        let init = Recognizer::init(m.dims(), Head::Ar, cfg.seed).unwrap();
        assert_eq!(m, init);
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let d = synth_dataset(&tiny_spec(), 40, Split::Train).unwrap();
        let cfg = small_cfg(Head::Ctc, Method::Nll);
        let a = train(&cfg, &d, Some(&d), None).unwrap();
        let b = train(&cfg, &d, Some(&d), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pssr_needs_full_coverage() {
        let d = synth_dataset(&tiny_spec(), 10, Split::Train).unwrap();
        let cfg = small_cfg(Head::Ctc, Method::Pssr);
        assert!(matches!(train(&cfg, &d, None, None), Err(Error::MissingMined(_))));
        let mut cache = MinedCache::default();
        for s in &d.samples[1..] {
            cache.insert(SimilarSet::empty(s.id));
        }
        assert!(matches!(
            train(&cfg, &d, None, Some(&cache)),
            Err(Error::MissingMined(0))
        ));
    }

    #[test]
    fn zero_alpha_reproduces_baseline_bit_for_bit() {
        let d = synth_dataset(&tiny_spec(), 30, Split::Train).unwrap();
        for head in Head::ALL {
            let base_cfg = small_cfg(head, Method::Nll);
            let mut cache = MinedCache::default();
            for s in &d.samples {
                cache.insert(SimilarSet {
                    sample_id: s.id,
                    perception: vec![ScoredSequence::new(vec![0], -1.0)],
                    semantic: vec![ScoredSequence::new(vec![1, 2], -1.0)],
                });
            }
            let pssr_cfg = TrainConfig {
                method: Method::Pssr,
                pssr: PssrConfig {
                    alpha: 0.0,
                    ..PssrConfig::default()
                },
                ..base_cfg.clone()
            };
            let (a, la) = train(&base_cfg, &d, None, None).unwrap();
            let (b, lb) = train(&pssr_cfg, &d, None, Some(&cache)).unwrap();
            assert_eq!(a, b);
            assert_eq!(la, lb);
        }
    }
}
