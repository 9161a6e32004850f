//! Method registry, model evaluation and the benchmark runner.
//!
//! A benchmark run trains every (method, seed) pair on the same bundle and
//! evaluates all of them against identical eval splits, including one fixed
//! transfer-attack adversarial split built once from a frozen reference
//! model. Runs execute sequentially in a fixed order so that reports are
//! byte-reproducible.

use std::time::Instant;

use roast_core::masking::{MaskMode, Strategy};
use roast_core::metrics::{
    self, EvalRecord, MetricVector, SplitTag,
};
use roast_core::model::{Model, TokenBatch};
use roast_core::tensor::Tensor;
use roast_core::trainer::{self, Objective, RoastConfig, TrainLog};
use serde::{Deserialize, Serialize};

use crate::attack;
use crate::config::ExperimentConfig;
use crate::data::{self, DatasetBundle, Split, Tag};
use crate::CliError;

/// The fixed method registry: vanilla fine-tuning, its perturbation and
/// selective-update ablations, and the full method under each masking
/// strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Plain cross-entropy, no masking.
    Vanilla,
    /// Adversarial + consistency objective only.
    Adv,
    /// Hard-threshold selective update on the plain objective.
    Thre,
    /// Adversarial objective + hard-threshold selection.
    AdvThre,
    /// Adversarial objective + probability-scaled (dense) gradients.
    AdvScal,
    /// Adversarial objective + sampled mask (importance-ordered).
    Roast,
    /// Sampled mask over randomly assigned ranks.
    RoastRand,
    /// Sampled mask over reversed ranks.
    RoastMin,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Vanilla,
        Method::Adv,
        Method::Thre,
        Method::AdvThre,
        Method::AdvScal,
        Method::Roast,
        Method::RoastRand,
        Method::RoastMin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Adv => "adv",
            Method::Thre => "thre",
            Method::AdvThre => "adv-thre",
            Method::AdvScal => "adv-scal",
            Method::Roast => "roast",
            Method::RoastRand => "roast-rand",
            Method::RoastMin => "roast-min",
        }
    }

    pub fn parse(s: &str) -> Result<Method, CliError> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                CliError::Validation(format!(
                    "unknown method '{s}' (known: {})",
                    Method::ALL.map(|m| m.name()).join(", ")
                ))
            })
    }

    /// Applies the method's objective and masking choices to a base config.
    pub fn apply(self, base: &RoastConfig) -> RoastConfig {
        let mut cfg = base.clone();
        match self {
            Method::Vanilla => {
                cfg.objective = Objective::TaskOnly;
                cfg.mask_mode = MaskMode::Off;
            }
            Method::Adv => {
                cfg.objective = Objective::Adversarial;
                cfg.mask_mode = MaskMode::Off;
            }
            Method::Thre => {
                cfg.objective = Objective::TaskOnly;
                cfg.mask_mode = MaskMode::HardThreshold;
            }
            Method::AdvThre => {
                cfg.objective = Objective::Adversarial;
                cfg.mask_mode = MaskMode::HardThreshold;
            }
            Method::AdvScal => {
                cfg.objective = Objective::Adversarial;
                cfg.mask_mode = MaskMode::SoftScale;
            }
            Method::Roast => {
                cfg.objective = Objective::Adversarial;
                cfg.mask_mode = MaskMode::Sample;
                cfg.strategy = Strategy::Max;
            }
            Method::RoastRand => {
                cfg.objective = Objective::Adversarial;
                cfg.mask_mode = MaskMode::Sample;
                cfg.strategy = Strategy::Rand;
            }
            Method::RoastMin => {
                cfg.objective = Objective::Adversarial;
                cfg.mask_mode = MaskMode::Sample;
                cfg.strategy = Strategy::Min;
            }
        }
        cfg
    }
}

/// Serializable mirror of the five-metric vector.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MetricsRow {
    pub acc_in: f64,
    pub acc_shift: f64,
    pub acc_adv: f64,
    pub ece: f64,
    pub auroc: f64,
}

impl From<MetricVector> for MetricsRow {
    fn from(v: MetricVector) -> Self {
        MetricsRow {
            acc_in: v.acc_in,
            acc_shift: v.acc_shift,
            acc_adv: v.acc_adv,
            ece: v.ece,
            auroc: v.auroc,
        }
    }
}

impl From<MetricsRow> for MetricVector {
    fn from(r: MetricsRow) -> Self {
        MetricVector {
            acc_in: r.acc_in,
            acc_shift: r.acc_shift,
            acc_adv: r.acc_adv,
            ece: r.ece,
            auroc: r.auroc,
        }
    }
}

/// Per-dataset breakdown entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitBreakdown {
    pub name: String,
    pub tag: Tag,
    pub examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ece: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mask_density: f64,
    pub iou_vs_first: f64,
    pub iou_vs_last: f64,
}

impl From<&trainer::EpochRecord> for EpochRow {
    fn from(r: &trainer::EpochRecord) -> Self {
        EpochRow {
            epoch: r.epoch,
            mean_loss: r.mean_loss,
            mask_density: r.mask_density,
            iou_vs_first: r.iou_vs_first,
            iou_vs_last: r.iou_vs_last,
        }
    }
}

/// One completed (method, seed) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub metrics: MetricsRow,
    /// Mean relative improvement vs the same seed's vanilla run (percent).
    pub delta_avg: Option<f64>,
    /// Metrics excluded from the aggregate because the baseline already
    /// sits at the best score.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta_excluded: Vec<String>,
    pub per_split: Vec<SplitBreakdown>,
    pub epochs: Vec<EpochRow>,
}

/// A run that was aborted (divergence), kept out of the aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRecord {
    pub method: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    /// Method column order for the report.
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureRecord>,
}

/// Class-probability records for one split.
fn split_records(
    model: &Model,
    split: &Split,
    tag: SplitTag,
    batch: usize,
) -> Result<Vec<EvalRecord>, CliError> {
    let mut records = Vec::with_capacity(split.examples.len());
    let d = model.spec.embed_dim;
    let seq_len = split.seq_len();
    for (chunk_idx, chunk) in split.examples.chunks(batch).enumerate() {
        let rows: Vec<Vec<usize>> = chunk.iter().map(|e| e.tokens.clone()).collect();
        let tb = TokenBatch::from_rows(&rows)?;
        let proba = match &split.perturbations {
            None => model.predict_proba(&tb)?,
            Some(perts) => {
                // replay the stored embedding perturbations
                let emb = model.embedding_values(&tb)?;
                let base = chunk_idx * batch;
                let mut data = emb.data().to_vec();
                for (i, _) in chunk.iter().enumerate() {
                    let pert = &perts[base + i];
                    if pert.len() != seq_len * d {
                        return Err(CliError::Validation(format!(
                            "stored perturbation of length {} does not fit {}x{}",
                            pert.len(),
                            seq_len,
                            d
                        )));
                    }
                    for (j, &p) in pert.iter().enumerate() {
                        data[i * seq_len * d + j] += p;
                    }
                }
                let perturbed = Tensor::new(emb.shape().to_vec(), data)?;
                model.predict_proba_embeddings(perturbed)?
            }
        };
        let classes = model.spec.num_classes;
        for (i, e) in chunk.iter().enumerate() {
            let dist = proba.data()[i * classes..(i + 1) * classes].to_vec();
            records.push(EvalRecord::new(dist, e.label, tag)?);
        }
    }
    Ok(records)
}

/// Evaluates a trained model over every eval split of the bundle.
pub fn evaluate_model(
    model: &Model,
    bundle: &DatasetBundle,
    batch: usize,
) -> Result<(MetricVector, Vec<SplitBreakdown>), CliError> {
    let mut acc_by_tag: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    let mut ece_values = Vec::new();
    let mut in_records: Vec<EvalRecord> = Vec::new();
    let mut anomaly_sets: Vec<Vec<EvalRecord>> = Vec::new();
    let mut breakdown = Vec::new();

    for split in &bundle.evals {
        let Some(tag) = split.tag.metric_tag() else {
            continue;
        };
        let records = split_records(model, split, tag, batch)?;
        let mut entry = SplitBreakdown {
            name: split.name.clone(),
            tag: split.tag,
            examples: records.len(),
            accuracy: None,
            ece: None,
        };
        match split.tag {
            Tag::Anomaly => anomaly_sets.push(records),
            t @ (Tag::In | Tag::Shift | Tag::Adv) => {
                let acc = metrics::accuracy(&records)?;
                let ece = metrics::expected_calibration_error(&records, metrics::DEFAULT_ECE_BINS)?;
                entry.accuracy = Some(acc);
                entry.ece = Some(ece);
                ece_values.push(ece);
                let key = match t {
                    Tag::In => "in",
                    Tag::Shift => "shift",
                    _ => "adv",
                };
                acc_by_tag.entry(key).or_default().push(acc);
                if t == Tag::In {
                    in_records.extend(records);
                }
            }
            Tag::Train => unreachable!(),
        }
        breakdown.push(entry);
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let need = |key: &str| -> Result<f64, CliError> {
        acc_by_tag
            .get(key)
            .filter(|v| !v.is_empty())
            .map(|v| mean(v))
            .ok_or_else(|| CliError::Validation(format!("bundle has no '{key}' eval split")))
    };
    let acc_in = need("in")?;
    let acc_shift = need("shift")?;
    let acc_adv = need("adv")?;
    if anomaly_sets.is_empty() {
        return Err(CliError::Validation("bundle has no anomaly split".into()));
    }
    let aurocs: Vec<f64> = anomaly_sets
        .iter()
        .map(|s| metrics::auroc_msp(&in_records, s))
        .collect::<Result<_, _>>()?;

    let vector = MetricVector {
        acc_in,
        acc_shift,
        acc_adv,
        ece: mean(&ece_values),
        auroc: mean(&aurocs),
    };
    vector.validate()?;
    Ok((vector, breakdown))
}

/// Prepared state shared by all runs: the bundle with its frozen
/// adversarial split, plus the shared warm-started base model.
///
/// The fine-tuning methods assume a trained starting point (they perturb
/// and selectively update an existing model), so one base is plain-trained
/// once and every (method, seed) run fine-tunes a clone of it; seeds vary
/// only the fine-tuning phase, mirroring how fine-tuning variance is
/// usually measured over a single pretrained model.
pub struct Harness {
    pub spec: roast_core::model::ModelSpec,
    pub config: ExperimentConfig,
    pub bundle: DatasetBundle,
    base: Model,
}

impl Harness {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self, CliError> {
        config.validate()?;
        let spec = config.model.to_spec()?;
        let mut bundle = build_bundle(config)?;
        let train_split = bundle.train.to_train_split()?;

        let mut base = Model::new(spec.clone(), config.pretrain_seed)?;
        if config.pretrain_epochs > 0 {
            let mut cfg = Method::Vanilla.apply(&config.roast.to_core(config.pretrain_seed)?);
            cfg.epochs = config.pretrain_epochs;
            trainer::train(&mut base, &train_split, &cfg)?;
        }

        if bundle.splits_with_tag(Tag::Adv).next().is_none() {
            // freeze a vanilla fine-tune of the base and attack it once
            let mut reference = base.clone();
            let cfg = Method::Vanilla.apply(&config.roast.to_core(config.reference_seed)?);
            trainer::train(&mut reference, &train_split, &cfg)?;
            let source = bundle
                .splits_with_tag(Tag::In)
                .next()
                .ok_or_else(|| CliError::Validation("bundle has no 'in' eval split".into()))?
                .clone();
            let adv = attack::build_transfer_adversarial_set(
                &reference,
                &source,
                config.attack_delta,
                cfg.norm_scope,
                config.eval_batch,
            )?;
            bundle.replace_or_push(adv);
        }
        Ok(Harness {
            spec,
            config: config.clone(),
            bundle,
            base,
        })
    }

    /// Trains and evaluates one (method, seed) pair from the shared base.
    pub fn run_one(
        &self,
        method: Method,
        seed: u64,
    ) -> Result<(Model, TrainLog, MetricVector, Vec<SplitBreakdown>), CliError> {
        let cfg = method.apply(&self.config.roast.to_core(seed)?);
        let mut model = self.base.clone();
        let log = trainer::train(&mut model, &self.bundle.train.to_train_split()?, &cfg)?;
        let (metrics, breakdown) = evaluate_model(&model, &self.bundle, self.config.eval_batch)?;
        Ok((model, log, metrics, breakdown))
    }
}

fn build_bundle(config: &ExperimentConfig) -> Result<DatasetBundle, CliError> {
    match &config.data {
        crate::config::DataConfig::Synthetic(spec) => data::generate_synthetic_suite(spec),
        crate::config::DataConfig::Jsonl {
            train,
            r#in,
            shift,
            adv,
            anomaly,
        } => {
            let vocab = config.model.vocab_size;
            let classes = config.model.num_classes;
            let mut warn_all = Vec::new();
            let mut ingest = |path: &std::path::Path, tag: Tag| -> Result<Split, CliError> {
                let (split, warnings) = data::ingest_jsonl_dataset(path, tag, vocab, classes)?;
                warn_all.extend(warnings);
                Ok(split)
            };
            let train = ingest(train, Tag::Train)?;
            let mut evals = vec![ingest(r#in, Tag::In)?];
            for p in shift {
                evals.push(ingest(p, Tag::Shift)?);
            }
            for p in adv {
                evals.push(ingest(p, Tag::Adv)?);
            }
            for p in anomaly {
                evals.push(ingest(p, Tag::Anomaly)?);
            }
            for w in warn_all {
                eprintln!("warning: {w}");
            }
            if evals.iter().filter(|s| s.tag == Tag::Shift).count() == 0 {
                return Err(CliError::Validation(
                    "jsonl data needs at least one shift split".into(),
                ));
            }
            if evals.iter().filter(|s| s.tag == Tag::Anomaly).count() == 0 {
                return Err(CliError::Validation(
                    "jsonl data needs at least one anomaly split".into(),
                ));
            }
            Ok(DatasetBundle {
                vocab,
                classes,
                train,
                evals,
            })
        }
    }
}

fn resolve_methods(config: &ExperimentConfig) -> Result<Vec<Method>, CliError> {
    let methods = if config.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        let mut out = Vec::new();
        for name in &config.methods {
            let m = Method::parse(name)?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        out
    };
    if !methods.contains(&Method::Vanilla) {
        return Err(CliError::Validation(
            "the method list must include 'vanilla' (it is the improvement baseline)".into(),
        ));
    }
    Ok(methods)
}

/// Runs the full method grid. Divergent runs are recorded as failures and
/// excluded from the aggregates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, CliError> {
    let methods = resolve_methods(config)?;
    let harness = Harness::prepare(config)?;

    let mut runs: Vec<RunRecord> = Vec::new();
    let mut failures = Vec::new();
    // vanilla first so every seed's baseline exists before its dependents
    let mut ordered = vec![Method::Vanilla];
    ordered.extend(methods.iter().copied().filter(|&m| m != Method::Vanilla));

    for &method in &ordered {
        for &seed in &config.seeds {
            let started = Instant::now();
            match harness.run_one(method, seed) {
                Ok((_, log, vector, breakdown)) => {
                    // vanilla compares against itself, which is exactly 0
                    let base = if method == Method::Vanilla {
                        Some(vector)
                    } else {
                        base_metrics(&runs, seed)
                    };
                    let (delta, excluded) = match base {
                        Some(base) => {
                            let ri = metrics::relative_improvement(&vector, &base);
                            (
                                Some(ri.value),
                                ri.excluded.iter().map(|s| s.to_string()).collect(),
                            )
                        }
                        None => (None, Vec::new()),
                    };
                    println!(
                        "run {:>10} seed {}: acc_in {:.2} acc_shift {:.2} acc_adv {:.2} ece {:.2} auroc {:.4} ({:.2?})",
                        method.name(),
                        seed,
                        vector.acc_in,
                        vector.acc_shift,
                        vector.acc_adv,
                        vector.ece,
                        vector.auroc,
                        started.elapsed()
                    );
                    runs.push(RunRecord {
                        method: method.name().to_string(),
                        seed,
                        metrics: vector.into(),
                        delta_avg: delta,
                        delta_excluded: excluded,
                        per_split: breakdown,
                        epochs: log.epochs.iter().map(EpochRow::from).collect(),
                    });
                }
                Err(CliError::Divergence(msg)) => {
                    eprintln!("run {} seed {seed} diverged: {msg}", method.name());
                    failures.push(FailureRecord {
                        method: method.name().to_string(),
                        seed,
                        error: msg,
                    });
                }
                Err(other) => return Err(other),
            }
        }
    }

    Ok(ExperimentOutcome {
        methods: ordered.iter().map(|m| m.name().to_string()).collect(),
        seeds: config.seeds.clone(),
        runs,
        failures,
    })
}

fn base_metrics(runs: &[RunRecord], seed: u64) -> Option<MetricVector> {
    runs.iter()
        .find(|r| r.method == "vanilla" && r.seed == seed)
        .map(|r| r.metrics.into())
}
