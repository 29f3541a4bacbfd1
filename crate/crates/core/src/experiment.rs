//! Experiment drivers: configuration, the per-method pipeline and the
//! hardness, dataset-shift, proportion and active-learning studies.
//!
//! Every driver is a pure function of the configuration and its seeds. A run
//! seed `s` selects the model initialization and shuffling (`s` itself) and a
//! fresh draw of the synthetic data (`mix_seed(task.seed, s)`); the lexicon
//! stays fixed across seeds.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::{BaselineHyper, PssrConfig};
use crate::math::{mean, median, mix_seed};
use crate::metrics::{
    calibration_report, reliability_svg, save_predictions, write_report_csv, BinScheme,
    CalibrationReport, PredictionRecord, DEFAULT_BINS,
};
use crate::model::{
    evaluate, mine_similar_sets, train_with_remining, Head, LrSchedule, Method, MinedCache, Recognizer,
    TrainConfig, TrainLog,
};
use crate::semlm::{fit_bicontext_lm, BiContextLM};
use crate::task::{
    generate_lexicon, load_dataset, save_dataset, synth_dataset, ConfusablePair, Corruption, Dataset, Split, TaskSpec,
    DEFAULT_LEXICON_SEED,
};
use crate::{Error, Result};

/// Synthetic task parameters plus split sizes. The lexicon is generated from
/// `lexicon_size` and `lexicon_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub alphabet_size: usize,
    pub feature_dim: usize,
    pub prototype_separation: f64,
    pub confusable_pairs: Vec<ConfusablePair>,
    pub lexicon_size: usize,
    pub lexicon_seed: u64,
    pub frames_per_token: (usize, usize),
    pub base_noise: f64,
    pub hard_noise: f64,
    pub hardness_ratio: f64,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let spec = TaskSpec::default();
        Self {
            alphabet_size: spec.alphabet_size,
            feature_dim: spec.feature_dim,
            prototype_separation: spec.prototype_separation,
            confusable_pairs: spec.confusable_pairs,
            lexicon_size: spec.lexicon.len(),
            lexicon_seed: DEFAULT_LEXICON_SEED,
            frames_per_token: spec.frames_per_token,
            base_noise: spec.base_noise,
            hard_noise: spec.hard_noise,
            hardness_ratio: spec.hardness_ratio,
            seed: spec.seed,
            train_size: 5000,
            val_size: 200,
            test_size: 1000,
        }
    }
}

impl TaskConfig {
    /// The task spec used under run seed `seed`.
    pub fn spec(&self, seed: u64) -> Result<TaskSpec> {
        let spec = TaskSpec {
            alphabet_size: self.alphabet_size,
            feature_dim: self.feature_dim,
            prototype_separation: self.prototype_separation,
            confusable_pairs: self.confusable_pairs.clone(),
            lexicon: generate_lexicon(self.alphabet_size, self.lexicon_size, self.lexicon_seed),
            frames_per_token: self.frames_per_token,
            base_noise: self.base_noise,
            hard_noise: self.hard_noise,
            hardness_ratio: self.hardness_ratio,
            seed: mix_seed(self.seed, seed),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Optimizer and architecture settings shared by every trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub hidden: usize,
    pub decoder_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub clip: f64,
    pub remine_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden: t.hidden,
            decoder_hidden: t.decoder_hidden,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            schedule: t.schedule,
            momentum: t.momentum,
            clip: t.clip,
            remine_every: t.remine_every,
        }
    }
}

/// Per-head overrides of the global regularization intensity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadAlpha {
    pub ctc: Option<f64>,
    pub ar: Option<f64>,
}

impl HeadAlpha {
    pub fn get(&self, head: Head) -> Option<f64> {
        match head {
            Head::Ctc => self.ctc,
            Head::Ar => self.ar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSettings {
    /// Add-λ smoothing of the bidirectional-context LM.
    pub lm_lambda: f64,
}

impl Default for MiningSettings {
    fn default() -> Self {
        Self { lm_lambda: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub bins: usize,
    /// Bin table drawn in reliability diagrams and written to report CSVs.
    pub scheme: BinScheme,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            scheme: BinScheme::EqualWidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSettings {
    pub kinds: Vec<Corruption>,
    pub severities: Vec<f64>,
    pub seed: u64,
}

impl Default for ShiftSettings {
    fn default() -> Self {
        Self {
            kinds: Corruption::ALL.to_vec(),
            severities: vec![0.0, 0.5, 1.0],
            seed: 99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardnessSettings {
    pub ratios: Vec<f64>,
    pub methods: Vec<Method>,
}

impl Default for HardnessSettings {
    fn default() -> Self {
        Self {
            ratios: vec![0.0, 0.5, 1.0],
            methods: vec![Method::Nll],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub rhos: Vec<f64>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            rhos: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

/// Active-learning query strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    /// Least confidence under a plainly trained model.
    LeastConfidence,
    /// Least confidence under a model trained with the regularizer.
    PssrLeastConfidence,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::Random,
        Strategy::LeastConfidence,
        Strategy::PssrLeastConfidence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::LeastConfidence => "least-confidence",
            Strategy::PssrLeastConfidence => "pssr-least-confidence",
        }
    }

    fn method(self) -> Method {
        match self {
            Strategy::PssrLeastConfidence => Method::Pssr,
            _ => Method::Nll,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Unknown {
                what: "strategy",
                name: s.into(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveSettings {
    pub head: Head,
    /// Fraction of the pool labeled before the first round.
    pub init_fraction: f64,
    /// Fraction of the pool queried per round.
    pub query_fraction: f64,
    pub rounds: usize,
    pub strategies: Vec<Strategy>,
}

impl Default for ActiveSettings {
    fn default() -> Self {
        Self {
            head: Head::Ctc,
            init_fraction: 0.1,
            query_fraction: 0.01,
            rounds: 5,
            strategies: Strategy::ALL.to_vec(),
        }
    }
}

/// Everything a command needs; read from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub heads: Vec<Head>,
    pub methods: Vec<Method>,
    pub task: TaskConfig,
    pub train: TrainSettings,
    pub pssr: PssrConfig,
    /// Replaces `pssr.alpha` for the named head.
    pub head_alpha: HeadAlpha,
    pub baselines: BaselineHyper,
    pub mining: MiningSettings,
    pub metrics: MetricSettings,
    pub shift: ShiftSettings,
    pub hardness: HardnessSettings,
    pub ablation: AblationSettings,
    pub active: ActiveSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs"),
            seeds: vec![1, 2, 3],
            heads: Head::ALL.to_vec(),
            methods: vec![Method::Nll, Method::Pssr],
            task: TaskConfig::default(),
            train: TrainSettings::default(),
            pssr: PssrConfig {
                alpha: 0.1,
                ..PssrConfig::default()
            },
            head_alpha: HeadAlpha::default(),
            baselines: BaselineHyper::default(),
            mining: MiningSettings::default(),
            metrics: MetricSettings::default(),
            shift: ShiftSettings::default(),
            hardness: HardnessSettings::default(),
            ablation: AblationSettings::default(),
            active: ActiveSettings::default(),
        }
    }
}

fn unit_interval(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::InvalidArgument(format!("{what} {v} is outside [0, 1]"))),
        None => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::parse("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Empty("seed list"));
        }
        if self.heads.is_empty() || self.methods.is_empty() {
            return Err(Error::Empty("head or method list"));
        }
        self.task.spec(0)?;
        if self.task.train_size == 0 || self.task.test_size == 0 {
            return Err(Error::InvalidArgument("train and test sizes must be >= 1".into()));
        }
        for head in Head::ALL {
            for method in [Method::Nll, Method::Pssr] {
                self.train_config(head, method, 0).validate()?;
            }
        }
        if !(self.mining.lm_lambda > 0.0) {
            return Err(Error::InvalidArgument("lm_lambda must be positive".into()));
        }
        if self.metrics.bins == 0 {
            return Err(Error::InvalidArgument("bin count must be >= 1".into()));
        }
        if self.shift.severities.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument("severities must be >= 0".into()));
        }
        unit_interval("hardness ratio", &self.hardness.ratios)?;
        unit_interval("perception fraction", &self.ablation.rhos)?;
        let a = &self.active;
        unit_interval("active-learning fraction", &[a.init_fraction, a.query_fraction])?;
        Ok(())
    }

    /// Training configuration for one cell.
    pub fn train_config(&self, head: Head, method: Method, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            head,
            method,
            pssr: PssrConfig {
                alpha: self.head_alpha.get(head).unwrap_or(self.pssr.alpha),
                ..self.pssr
            },
            hyper: self.baselines,
            hidden: t.hidden,
            decoder_hidden: t.decoder_hidden,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            schedule: t.schedule,
            momentum: t.momentum,
            clip: t.clip,
            seed,
            remine_every: t.remine_every,
        }
    }

    /// (head, method) cells of the pipeline, skipping methods a head cannot
    /// train.
    pub fn cells(&self) -> Result<Vec<(Head, Method)>> {
        let mut cells = Vec::new();
        for &head in &self.heads {
            for &method in &self.methods {
                if method.supports(head) {
                    cells.push((head, method));
                } else {
                    log::warn!("skipping {method} on the {head} head (unsupported)");
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::InvalidArgument("no trainable (head, method) pair".into()));
        }
        Ok(cells)
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    pub fn cell_dir(&self, seed: u64, head: Head, method: Method) -> PathBuf {
        self.seed_dir(seed).join(format!("{head}-{method}"))
    }
}

/// Data and language model for one run seed.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub lm: BiContextLM,
}

impl SeedData {
    pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        Self::generate_with(cfg, &cfg.task.spec(seed)?, seed)
    }

    fn generate_with(cfg: &ExperimentConfig, spec: &TaskSpec, seed: u64) -> Result<Self> {
        let train = synth_dataset(spec, cfg.task.train_size, Split::Train)?;
        let val = match cfg.task.val_size {
            0 => Dataset { samples: vec![], spec: spec.clone(), split: Split::Val },
            n => synth_dataset(spec, n, Split::Val)?,
        };
        let test = synth_dataset(spec, cfg.task.test_size, Split::Test)?;
        Self::from_splits(cfg, seed, train, val, test)
    }

    pub fn from_splits(
        cfg: &ExperimentConfig,
        seed: u64,
        train: Dataset,
        val: Dataset,
        test: Dataset,
    ) -> Result<Self> {
        let lm = fit_bicontext_lm(&train.labels(), train.spec.alphabet_size, cfg.mining.lm_lambda)?;
        Ok(Self {
            seed,
            train,
            val,
            test,
            lm,
        })
    }

    pub fn data_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
        cfg.seed_dir(seed).join("data")
    }

    /// Writes the three splits as JSONL under the seed's `data` directory.
    pub fn save(&self, cfg: &ExperimentConfig) -> Result<()> {
        let dir = Self::data_dir(cfg, self.seed);
        create_dir(&dir)?;
        for d in [&self.train, &self.val, &self.test] {
            save_dataset(d, &dir.join(format!("{}.jsonl", d.split.name())))?;
        }
        Ok(())
    }

    /// Reads splits written by [`SeedData::save`] and refits the LM.
    pub fn load(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let dir = Self::data_dir(cfg, seed);
        let load = |split: Split| load_dataset(&dir.join(format!("{}.jsonl", split.name())));
        Self::from_splits(cfg, seed, load(Split::Train)?, load(Split::Val)?, load(Split::Test)?)
    }

    fn val(&self) -> Option<&Dataset> {
        (!self.val.is_empty()).then_some(&self.val)
    }
}

/// Trains the CTC reference model, which doubles as the CTC baseline.
pub fn train_reference(cfg: &ExperimentConfig, data: &SeedData) -> Result<(Recognizer, TrainLog)> {
    let tc = cfg.train_config(Head::Ctc, Method::Nll, data.seed);
    train_with_remining(&tc, &data.train, data.val(), None, None)
}

/// Mines similar sets for the training split with the reference model.
pub fn mine_training_set(
    data: &SeedData,
    reference: &Recognizer,
    pssr: &PssrConfig,
) -> Result<MinedCache> {
    mine_similar_sets(reference, &data.lm, &data.train, pssr)
}

/// Lazily built shared state of one seed: reference model and mined sets.
struct SeedState<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a SeedData,
    reference: Option<(Recognizer, TrainLog)>,
    mined: Option<MinedCache>,
}

impl<'a> SeedState<'a> {
    fn new(cfg: &'a ExperimentConfig, data: &'a SeedData) -> Self {
        Self {
            cfg,
            data,
            reference: None,
            mined: None,
        }
    }

    fn reference(&mut self) -> Result<&(Recognizer, TrainLog)> {
        if self.reference.is_none() {
            self.reference = Some(train_reference(self.cfg, self.data)?);
        }
        Ok(self.reference.as_ref().expect("set above"))
    }

    fn mined(&mut self) -> Result<&MinedCache> {
        if self.mined.is_none() {
            let pssr = self.cfg.pssr;
            let reference = self.reference()?.0.clone();
            self.mined = Some(mine_training_set(self.data, &reference, &pssr)?);
        }
        Ok(self.mined.as_ref().expect("set above"))
    }

    fn train(&mut self, head: Head, method: Method) -> Result<(Recognizer, TrainLog)> {
        if head == Head::Ctc && method == Method::Nll {
            return self.reference().cloned();
        }
        let tc = self.cfg.train_config(head, method, self.data.seed);
        let mined = if method == Method::Pssr {
            Some(self.mined()?.clone())
        } else {
            None
        };
        let lm = (tc.remine_every > 0).then_some(&self.data.lm);
        train_with_remining(&tc, &self.data.train, self.data.val(), mined.as_ref(), lm)
    }
}

/// One trained and evaluated (seed, head, method) cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub seed: u64,
    pub head: Head,
    pub method: Method,
    pub model: Recognizer,
    pub log: TrainLog,
    pub records: Vec<PredictionRecord>,
    pub report: CalibrationReport,
}

/// Mean and sample standard deviation of each metric over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub head: Head,
    pub method: Method,
    pub seeds: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub ece_mean: f64,
    pub ece_std: f64,
    pub ace_mean: f64,
    pub ace_std: f64,
    pub mce_mean: f64,
    pub mce_std: f64,
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Groups reports by (head, method) in first-seen order.
pub fn summarize<'a, I>(reports: I) -> Vec<SummaryRow>
where
    I: IntoIterator<Item = (Head, Method, &'a CalibrationReport)>,
{
    let mut order: Vec<(Head, Method)> = Vec::new();
    let mut groups: BTreeMap<usize, Vec<&CalibrationReport>> = BTreeMap::new();
    for (head, method, r) in reports {
        let idx = match order.iter().position(|k| *k == (head, method)) {
            Some(i) => i,
            None => {
                order.push((head, method));
                order.len() - 1
            }
        };
        groups.entry(idx).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(idx, rs)| {
            let col = |f: fn(&CalibrationReport) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (acc, ece, ace, mce) = (
                col(|r| r.accuracy),
                col(|r| r.ece),
                col(|r| r.ace),
                col(|r| r.mce),
            );
            SummaryRow {
                head: order[idx].0,
                method: order[idx].1,
                seeds: rs.len(),
                acc_mean: mean(&acc),
                acc_std: std_dev(&acc),
                ece_mean: mean(&ece),
                ece_std: std_dev(&ece),
                ace_mean: mean(&ace),
                ace_std: std_dev(&ace),
                mce_mean: mean(&mce),
                mce_std: std_dev(&mce),
            }
        })
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_config_snapshot(cfg: &ExperimentConfig) -> Result<()> {
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("config.toml"), cfg.to_toml().as_bytes())
}

/// Writes the prediction log, report CSV and reliability diagram of an
/// evaluation into `dir`.
pub fn write_evaluation(
    dir: &Path,
    title: &str,
    records: &[PredictionRecord],
    report: &CalibrationReport,
) -> Result<()> {
    create_dir(dir)?;
    save_predictions(records, &dir.join("predictions.jsonl"))?;
    let mut csv = Vec::new();
    write_report_csv(report, &mut csv)?;
    write_file(&dir.join("report.csv"), &csv)?;
    write_file(&dir.join("reliability.svg"), reliability_svg(report, title).as_bytes())
}

pub fn write_train_log(dir: &Path, log: &TrainLog) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join("train_log.json");
    let mut bytes = serde_json::to_vec_pretty(log)?;
    bytes.push(b'\n');
    write_file(&path, &bytes)
}

/// Evaluates a model on `data` and builds its report.
pub fn evaluate_report(
    cfg: &ExperimentConfig,
    model: &Recognizer,
    data: &Dataset,
) -> Result<(Vec<PredictionRecord>, CalibrationReport)> {
    let records = evaluate(model, data)?;
    let report = calibration_report(&records, cfg.metrics.bins, cfg.metrics.scheme)?;
    Ok((records, report))
}

/// Output of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Serialize)]
struct RunRow {
    seed: u64,
    head: Head,
    method: Method,
    accuracy: f64,
    ece: f64,
    ace: f64,
    mce: f64,
}

/// Trains and evaluates every (seed, head, method) cell and writes
/// per-cell artifacts, `runs.csv` and `summary.csv` under `cfg.out`.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineResult> {
    cfg.validate()?;
    let cells = cfg.cells()?;
    write_config_snapshot(cfg)?;
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let data = SeedData::generate(cfg, seed)?;
        let mut state = SeedState::new(cfg, &data);
        for &(head, method) in &cells {
            log::info!("seed {seed}: training {head} {method}");
            let (model, log) = state.train(head, method)?;
            let (records, report) = evaluate_report(cfg, &model, &data.test)?;
            log::info!(
                "seed {seed} {head} {method}: acc {:.4} ece {:.4} ace {:.4} mce {:.4}",
                report.accuracy,
                report.ece,
                report.ace,
                report.mce
            );
            let dir = cfg.cell_dir(seed, head, method);
            write_evaluation(&dir, &format!("{head} {method} seed {seed}"), &records, &report)?;
            write_train_log(&dir, &log)?;
            model.save(&dir.join("model.txt"))?;
            results.push(CellResult {
                seed,
                head,
                method,
                model,
                log,
                records,
                report,
            });
        }
    }
    let summary = summarize(results.iter().map(|c| (c.head, c.method, &c.report)));
    let runs: Vec<RunRow> = results
        .iter()
        .map(|c| RunRow {
            seed: c.seed,
            head: c.head,
            method: c.method,
            accuracy: c.report.accuracy,
            ece: c.report.ece,
            ace: c.report.ace,
            mce: c.report.mce,
        })
        .collect();
    write_csv(&cfg.out.join("runs.csv"), &runs)?;
    write_csv(&cfg.out.join("summary.csv"), &summary)?;
    Ok(PipelineResult {
        cells: results,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessRow {
    pub seed: u64,
    pub ratio: f64,
    pub head: Head,
    pub method: Method,
    pub accuracy: f64,
    pub ece: f64,
}

/// Trains every head under each hardness ratio and evaluates it on a test
/// split drawn at the same ratio. Writes `hardness.csv`.
pub fn run_hardness_study(cfg: &ExperimentConfig, ratios: &[f64]) -> Result<Vec<HardnessRow>> {
    cfg.validate()?;
    unit_interval("hardness ratio", ratios)?;
    write_config_snapshot(cfg)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for &ratio in ratios {
            let spec = TaskSpec {
                hardness_ratio: ratio,
                ..cfg.task.spec(seed)?
            };
            let data = SeedData::generate_with(cfg, &spec, seed)?;
            let mut state = SeedState::new(cfg, &data);
            for &head in &cfg.heads {
                for &method in &cfg.hardness.methods {
                    if !method.supports(head) {
                        continue;
                    }
                    log::info!("seed {seed} ratio {ratio}: training {head} {method}");
                    let (model, _) = state.train(head, method)?;
                    let (_, report) = evaluate_report(cfg, &model, &data.test)?;
                    rows.push(HardnessRow {
                        seed,
                        ratio,
                        head,
                        method,
                        accuracy: report.accuracy,
                        ece: report.ece,
                    });
                }
            }
        }
    }
    write_csv(&cfg.out.join("hardness.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub seed: u64,
    pub head: Head,
    pub method: Method,
    pub kind: Corruption,
    pub severity: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub ace: f64,
    pub mce: f64,
}

/// Evaluates one trained model on every corrupted copy of `test`. Severity
/// 0 reproduces the clean evaluation.
pub fn shift_rows(
    cfg: &ExperimentConfig,
    seed: u64,
    method: Method,
    model: &Recognizer,
    test: &Dataset,
) -> Result<Vec<ShiftRow>> {
    let mut rows = Vec::new();
    for &kind in &cfg.shift.kinds {
        for &severity in &cfg.shift.severities {
            let corrupted = test.corrupted(kind, severity, mix_seed(cfg.shift.seed, seed))?;
            let (_, r) = evaluate_report(cfg, model, &corrupted)?;
            rows.push(ShiftRow {
                seed,
                head: model.head(),
                method,
                kind,
                severity,
                accuracy: r.accuracy,
                ece: r.ece,
                ace: r.ace,
                mce: r.mce,
            });
        }
    }
    Ok(rows)
}

/// Trains each configured cell on clean data and evaluates it under every
/// corruption. Writes `shift.csv`.
pub fn run_shift_study(
    cfg: &ExperimentConfig,
    kinds: &[Corruption],
    severities: &[f64],
) -> Result<Vec<ShiftRow>> {
    let cfg = ExperimentConfig {
        shift: ShiftSettings {
            kinds: kinds.to_vec(),
            severities: severities.to_vec(),
            ..cfg.shift.clone()
        },
        ..cfg.clone()
    };
    cfg.validate()?;
    let cells = cfg.cells()?;
    write_config_snapshot(&cfg)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let data = SeedData::generate(&cfg, seed)?;
        let mut state = SeedState::new(&cfg, &data);
        for &(head, method) in &cells {
            log::info!("seed {seed}: training {head} {method}");
            let (model, _) = state.train(head, method)?;
            rows.extend(shift_rows(&cfg, seed, method, &model, &data.test)?);
        }
    }
    write_csv(&cfg.out.join("shift.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub rho: f64,
    pub head: Head,
    pub accuracy: f64,
    pub ece: f64,
}

/// Full regularized runs that differ only in the perception fraction.
/// Writes `ablation.csv`.
pub fn run_proportion_ablation(cfg: &ExperimentConfig, rhos: &[f64]) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    unit_interval("perception fraction", rhos)?;
    write_config_snapshot(cfg)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let data = SeedData::generate(cfg, seed)?;
        let (reference, _) = train_reference(cfg, &data)?;
        for &rho in rhos {
            let pssr = PssrConfig {
                perception_fraction: rho,
                ..cfg.pssr
            };
            let mined = mine_training_set(&data, &reference, &pssr)?;
            for &head in &cfg.heads {
                log::info!("seed {seed} rho {rho}: training {head}");
                let base = cfg.train_config(head, Method::Pssr, seed);
                let tc = TrainConfig {
                    pssr: PssrConfig {
                        alpha: base.pssr.alpha,
                        ..pssr
                    },
                    ..base
                };
                let lm = (tc.remine_every > 0).then_some(&data.lm);
                let (model, _) = train_with_remining(&tc, &data.train, data.val(), Some(&mined), lm)?;
                let (_, r) = evaluate_report(cfg, &model, &data.test)?;
                rows.push(AblationRow {
                    seed,
                    rho,
                    head,
                    accuracy: r.accuracy,
                    ece: r.ece,
                });
            }
        }
    }
    write_csv(&cfg.out.join("ablation.csv"), &rows)?;
    Ok(rows)
}

/// ECE-minimizing ρ for `head` after taking the median ECE over seeds at
/// each ρ. Ties go to the smaller ρ.
pub fn best_rho(rows: &[AblationRow], head: Head) -> Option<f64> {
    let mut by_rho: Vec<(f64, Vec<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.head == head) {
        match by_rho.iter_mut().find(|(rho, _)| *rho == r.rho) {
            Some((_, v)) => v.push(r.ece),
            None => by_rho.push((r.rho, vec![r.ece])),
        }
    }
    by_rho.sort_by(|a, b| a.0.total_cmp(&b.0));
    by_rho
        .into_iter()
        .map(|(rho, eces)| (rho, median(&eces)))
        .fold(None, |best: Option<(f64, f64)>, (rho, e)| match best {
            Some((_, be)) if be <= e => best,
            _ => Some((rho, e)),
        })
        .map(|(rho, _)| rho)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveRow {
    pub seed: u64,
    pub strategy: Strategy,
    pub round: usize,
    pub labeled: usize,
    pub labeled_fraction: f64,
    pub accuracy: f64,
}

fn fraction_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).max(1)
}

/// Trains the strategy's model on the labeled subset.
fn active_model(
    cfg: &ExperimentConfig,
    seed: u64,
    strategy: Strategy,
    labeled: &Dataset,
) -> Result<Recognizer> {
    let head = cfg.active.head;
    let method = strategy.method();
    let empty = |split| Dataset {
        samples: Vec::new(),
        spec: labeled.spec.clone(),
        split,
    };
    let data = SeedData::from_splits(cfg, seed, labeled.clone(), empty(Split::Val), empty(Split::Test))?;
    let mut state = SeedState::new(cfg, &data);
    Ok(state.train(head, method)?.0)
}

/// One active-learning curve for `strategy` under run seed `seed`.
pub fn active_learning_curve(
    cfg: &ExperimentConfig,
    seed: u64,
    strategy: Strategy,
    pool: &Dataset,
    test: &Dataset,
) -> Result<Vec<ActiveRow>> {
    let a = &cfg.active;
    let n = pool.len();
    let init = fraction_count(a.init_fraction, n);
    let query = fraction_count(a.query_fraction, n);
    if init + a.rounds * query > n {
        return Err(Error::InvalidArgument(format!(
            "{} initial + {} rounds x {} queries exceeds the pool of {n}",
            init, a.rounds, query
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xa1)));
    let mut labeled: HashSet<u64> = order[..init].iter().map(|&i| pool.samples[i].id).collect();
    let mut rows = Vec::new();
    for round in 0..=a.rounds {
        let subset = pool.subset(&labeled);
        let model = active_model(cfg, seed, strategy, &subset)?;
        let records = evaluate(&model, test)?;
        let accuracy = crate::metrics::sequence_accuracy(&records)?;
        log::info!("seed {seed} {strategy} round {round}: {} labeled, acc {accuracy:.4}", labeled.len());
        rows.push(ActiveRow {
            seed,
            strategy,
            round,
            labeled: labeled.len(),
            labeled_fraction: labeled.len() as f64 / n as f64,
            accuracy,
        });
        if round == a.rounds {
            break;
        }
        let mut unlabeled: Vec<&crate::task::Sample> =
            pool.samples.iter().filter(|s| !labeled.contains(&s.id)).collect();
        match strategy {
            Strategy::Random => {
                let stream = mix_seed(seed, 0xa2 + round as u64);
                unlabeled.shuffle(&mut ChaCha8Rng::seed_from_u64(stream));
            }
            Strategy::LeastConfidence | Strategy::PssrLeastConfidence => {
                let mut scored = Vec::with_capacity(unlabeled.len());
                for s in unlabeled {
                    scored.push((model.predict(s)?.confidence, s));
                }
                scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
                unlabeled = scored.into_iter().map(|(_, s)| s).collect();
            }
        }
        labeled.extend(unlabeled.iter().take(query).map(|s| s.id));
    }
    Ok(rows)
}

/// Simulated-oracle active learning for every configured strategy and seed.
/// The training split is the unlabeled pool. Writes `active_learning.csv`.
pub fn run_active_learning(cfg: &ExperimentConfig) -> Result<Vec<ActiveRow>> {
    cfg.validate()?;
    if cfg.active.strategies.is_empty() {
        return Err(Error::Empty("strategy list"));
    }
    write_config_snapshot(cfg)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let spec = cfg.task.spec(seed)?;
        let pool = synth_dataset(&spec, cfg.task.train_size, Split::Train)?;
        let test = synth_dataset(&spec, cfg.task.test_size, Split::Test)?;
        for &strategy in &cfg.active.strategies {
            rows.extend(active_learning_curve(cfg, seed, strategy, &pool, &test)?);
        }
    }
    write_csv(&cfg.out.join("active_learning.csv"), &rows)?;
    Ok(rows)
}

/// Human-readable summary table.
pub fn print_summary<W: Write>(rows: &[SummaryRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "head method   seeds  acc            ece            ace            mce")?;
    for r in rows {
        writeln!(
            w,
            "{:<4} {:<8} {:>5}  {:.4}±{:.4}  {:.4}±{:.4}  {:.4}±{:.4}  {:.4}±{:.4}",
            r.head.name(),
            r.method.name(),
            r.seeds,
            r.acc_mean,
            r.acc_std,
            r.ece_mean,
            r.ece_std,
            r.ace_mean,
            r.ace_std,
            r.mce_mean,
            r.mce_std
        )?;
    }
    Ok(())
}
