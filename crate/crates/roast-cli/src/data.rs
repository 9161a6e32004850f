//! Synthetic multi-perspective dataset generation and JSONL ingestion.
//!
//! The synthetic task plants class-indicative token regions: a sequence's
//! class is the one whose signal region its tokens are drawn from, with
//! the remaining positions filled from a background region. The shifted
//! split keeps the labeling rule but swaps the background region, lowers
//! the signal rate and changes the sequence length. The anomaly split
//! draws from a vocabulary region disjoint from everything the model sees
//! in training.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use roast_core::metrics::SplitTag;
use roast_core::rng::RandomSource;
use roast_core::trainer::TrainSplit;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
    /// Tokens reserved per class as its signal region.
    #[serde(default = "default_signal_tokens")]
    pub signal_tokens_per_class: usize,
    /// Probability that a position carries a signal token (train/in-dist).
    #[serde(default = "default_signal_prob")]
    pub signal_prob: f64,
    #[serde(default = "default_shift_signal_prob")]
    pub shift_signal_prob: f64,
    #[serde(default = "default_shift_seq_len")]
    pub shift_seq_len: usize,
    /// Fraction of labels resampled uniformly at random.
    #[serde(default = "default_label_noise")]
    pub label_noise: f64,
    /// Tokens reserved at the top of the vocabulary for anomalies only.
    #[serde(default = "default_anomaly_tokens")]
    pub anomaly_tokens: usize,
    /// Seed for dataset content; independent of training seeds.
    #[serde(default)]
    pub data_seed: u64,
}

fn default_vocab() -> usize {
    200
}
fn default_seq_len() -> usize {
    16
}
fn default_classes() -> usize {
    3
}
fn default_train_size() -> usize {
    2000
}
fn default_eval_size() -> usize {
    500
}
fn default_signal_tokens() -> usize {
    20
}
fn default_signal_prob() -> f64 {
    0.35
}
fn default_shift_signal_prob() -> f64 {
    0.30
}
fn default_shift_seq_len() -> usize {
    20
}
fn default_label_noise() -> f64 {
    0.05
}
fn default_anomaly_tokens() -> usize {
    20
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        let signal_total = self.classes * self.signal_tokens_per_class;
        let needed = signal_total + self.anomaly_tokens + 2;
        if self.vocab < needed {
            return Err(CliError::Validation(format!(
                "vocabulary of {} too small: need at least {needed} tokens",
                self.vocab
            )));
        }
        if self.classes < 2 {
            return Err(CliError::Validation("need at least 2 classes".into()));
        }
        if !(0.0..=1.0).contains(&self.signal_prob)
            || !(0.0..=1.0).contains(&self.shift_signal_prob)
            || !(0.0..=1.0).contains(&self.label_noise)
        {
            return Err(CliError::Validation(
                "probabilities must lie in [0,1]".into(),
            ));
        }
        if self.seq_len == 0 || self.shift_seq_len == 0 || self.train_size == 0 || self.eval_size == 0
        {
            return Err(CliError::Validation(
                "sizes and lengths must be positive".into(),
            ));
        }
        Ok(())
    }

    fn signal_range(&self, class: usize) -> (usize, usize) {
        let start = class * self.signal_tokens_per_class;
        (start, start + self.signal_tokens_per_class)
    }

    /// Background is split in two: the first half feeds train/in-dist, the
    /// second half the shifted split.
    fn background_ranges(&self) -> ((usize, usize), (usize, usize)) {
        let bg_start = self.classes * self.signal_tokens_per_class;
        let bg_end = self.vocab - self.anomaly_tokens;
        let mid = bg_start + (bg_end - bg_start) / 2;
        ((bg_start, mid), (mid, bg_end))
    }

    fn anomaly_range(&self) -> (usize, usize) {
        (self.vocab - self.anomaly_tokens, self.vocab)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: Option<usize>,
}

/// One evaluation (or train) split. Adversarial splits built by transfer
/// attack additionally carry one stored embedding perturbation per example
/// (flattened `seq_len * embed_dim` values).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Split {
    pub name: String,
    pub tag: Tag,
    pub examples: Vec<Example>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbations: Option<Vec<Vec<f64>>>,
}

/// Serializable mirror of the metric split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tag {
    Train,
    In,
    Shift,
    Adv,
    Anomaly,
}

impl Tag {
    pub fn metric_tag(self) -> Option<SplitTag> {
        match self {
            Tag::Train => None,
            Tag::In => Some(SplitTag::InDistribution),
            Tag::Shift => Some(SplitTag::Shifted),
            Tag::Adv => Some(SplitTag::Adversarial),
            Tag::Anomaly => Some(SplitTag::Anomaly),
        }
    }

    pub fn needs_labels(self) -> bool {
        !matches!(self, Tag::Anomaly)
    }
}

impl std::fmt::Display for Tag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Tag::Train => "train",
            Tag::In => "in",
            Tag::Shift => "shift",
            Tag::Adv => "adv",
            Tag::Anomaly => "anomaly",
        };
        write!(f, "{s}")
    }
}

impl Split {
    pub fn seq_len(&self) -> usize {
        self.examples.first().map_or(0, |e| e.tokens.len())
    }

    pub fn validate(&self, vocab: usize, classes: usize) -> Result<(), CliError> {
        if self.examples.is_empty() {
            return Err(CliError::Validation(format!("empty split {}", self.name)));
        }
        let len = self.seq_len();
        for (i, e) in self.examples.iter().enumerate() {
            if e.tokens.len() != len {
                return Err(CliError::Validation(format!(
                    "split {}: example {i} has length {} != {len}",
                    self.name,
                    e.tokens.len()
                )));
            }
            if let Some(&bad) = e.tokens.iter().find(|&&t| t >= vocab) {
                return Err(CliError::Validation(format!(
                    "split {}: example {i} token {bad} >= vocab {vocab}",
                    self.name
                )));
            }
            match (self.tag.needs_labels(), e.label) {
                (true, None) => {
                    return Err(CliError::Validation(format!(
                        "split {}: example {i} is missing a label",
                        self.name
                    )))
                }
                (true, Some(l)) if l >= classes => {
                    return Err(CliError::Validation(format!(
                        "split {}: example {i} label {l} >= classes {classes}",
                        self.name
                    )))
                }
                _ => {}
            }
        }
        if let Some(perts) = &self.perturbations {
            if perts.len() != self.examples.len() {
                return Err(CliError::Validation(format!(
                    "split {}: {} perturbations for {} examples",
                    self.name,
                    perts.len(),
                    self.examples.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_train_split(&self) -> Result<TrainSplit, CliError> {
        let labels = self
            .examples
            .iter()
            .map(|e| {
                e.label
                    .ok_or_else(|| CliError::Validation("unlabeled training example".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TrainSplit {
            sequences: self.examples.iter().map(|e| e.tokens.clone()).collect(),
            labels,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub vocab: usize,
    pub classes: usize,
    pub train: Split,
    pub evals: Vec<Split>,
}

impl DatasetBundle {
    pub fn splits_with_tag(&self, tag: Tag) -> impl Iterator<Item = &Split> {
        self.evals.iter().filter(move |s| s.tag == tag)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate(self.vocab, self.classes)?;
        for s in &self.evals {
            s.validate(self.vocab, self.classes)?;
        }
        Ok(())
    }

    pub fn replace_or_push(&mut self, split: Split) {
        if let Some(existing) = self.evals.iter_mut().find(|s| s.name == split.name) {
            *existing = split;
        } else {
            self.evals.push(split);
        }
    }
}

fn draw_example(
    spec: &SyntheticSpec,
    rng: &mut RandomSource,
    seq_len: usize,
    signal_prob: f64,
    background: (usize, usize),
) -> Example {
    let class = rng.below(spec.classes);
    let (sig_lo, sig_hi) = spec.signal_range(class);
    let tokens = (0..seq_len)
        .map(|_| {
            if rng.bernoulli(signal_prob) {
                sig_lo + rng.below(sig_hi - sig_lo)
            } else {
                background.0 + rng.below(background.1 - background.0)
            }
        })
        .collect();
    let label = if spec.label_noise > 0.0 && rng.bernoulli(spec.label_noise) {
        rng.below(spec.classes)
    } else {
        class
    };
    Example {
        tokens,
        label: Some(label),
    }
}

/// Deterministic four-way evaluation suite plus a training split.
pub fn generate_synthetic_suite(spec: &SyntheticSpec) -> Result<DatasetBundle, CliError> {
    spec.validate()?;
    let mut rng = RandomSource::new(spec.data_seed);
    let (bg_in, bg_shift) = spec.background_ranges();
    let (anom_lo, anom_hi) = spec.anomaly_range();

    let train = Split {
        name: "train".into(),
        tag: Tag::Train,
        examples: (0..spec.train_size)
            .map(|_| draw_example(spec, &mut rng, spec.seq_len, spec.signal_prob, bg_in))
            .collect(),
        perturbations: None,
    };
    let in_dist = Split {
        name: "in".into(),
        tag: Tag::In,
        examples: (0..spec.eval_size)
            .map(|_| draw_example(spec, &mut rng, spec.seq_len, spec.signal_prob, bg_in))
            .collect(),
        perturbations: None,
    };
    let shift = Split {
        name: "shift".into(),
        tag: Tag::Shift,
        examples: (0..spec.eval_size)
            .map(|_| {
                draw_example(
                    spec,
                    &mut rng,
                    spec.shift_seq_len,
                    spec.shift_signal_prob,
                    bg_shift,
                )
            })
            .collect(),
        perturbations: None,
    };
    let anomaly = Split {
        name: "anomaly".into(),
        tag: Tag::Anomaly,
        examples: (0..spec.eval_size)
            .map(|_| Example {
                tokens: (0..spec.seq_len)
                    .map(|_| anom_lo + rng.below(anom_hi - anom_lo))
                    .collect(),
                label: None,
            })
            .collect(),
        perturbations: None,
    };

    let bundle = DatasetBundle {
        vocab: spec.vocab,
        classes: spec.classes,
        train,
        evals: vec![in_dist, shift, anomaly],
    };
    bundle.validate()?;
    Ok(bundle)
}

/// The planted labeling rule as a classifier: vote by signal-region token
/// counts, ties toward the lower class.
pub fn oracle_accuracy(spec: &SyntheticSpec, split: &Split) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for e in &split.examples {
        let Some(label) = e.label else { continue };
        let mut counts = vec![0usize; spec.classes];
        for &t in &e.tokens {
            if t < spec.classes * spec.signal_tokens_per_class {
                counts[t / spec.signal_tokens_per_class] += 1;
            }
        }
        let mut best = 0;
        for (c, &n) in counts.iter().enumerate().skip(1) {
            if n > counts[best] {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
        total += 1;
    }
    100.0 * correct as f64 / total.max(1) as f64
}

#[derive(Debug, Deserialize)]
struct JsonlLine {
    tokens: Vec<usize>,
    #[serde(default)]
    label: Option<usize>,
}

/// Reads one split from a JSONL file of `{"tokens": [...], "label": n|null}`
/// lines. Returns the split plus any warnings (labels on anomaly splits are
/// ignored with a warning, not an error).
pub fn ingest_jsonl_dataset(
    path: &Path,
    tag: Tag,
    vocab: usize,
    classes: usize,
) -> Result<(Split, Vec<String>), CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut examples = Vec::new();
    let mut warnings = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Io(format!("read {}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonlLine = serde_json::from_str(&line).map_err(|e| {
            CliError::Validation(format!(
                "{} line {}: malformed record: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        let mut label = parsed.label;
        if tag.needs_labels() && label.is_none() {
            return Err(CliError::Validation(format!(
                "{} line {}: split '{tag}' requires a label",
                path.display(),
                lineno + 1
            )));
        }
        if !tag.needs_labels() && label.is_some() {
            warnings.push(format!(
                "{} line {}: label on anomaly split ignored",
                path.display(),
                lineno + 1
            ));
            label = None;
        }
        examples.push(Example {
            tokens: parsed.tokens,
            label,
        });
    }
    if examples.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: empty split",
            path.display()
        )));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| tag.to_string());
    let split = Split {
        name,
        tag,
        examples,
        perturbations: None,
    };
    split.validate(vocab, classes)?;
    Ok((split, warnings))
}

/// Writes a split back out in the ingestion format.
pub fn export_jsonl_split(split: &Split, path: &Path) -> Result<(), CliError> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    for e in &split.examples {
        let line = serde_json::json!({ "tokens": e.tokens, "label": e.label });
        writeln!(w, "{line}").map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic_suite(&spec).unwrap();
        let b = generate_synthetic_suite(&spec).unwrap();
        assert_eq!(a.train.examples, b.train.examples);
        for (x, y) in a.evals.iter().zip(&b.evals) {
            assert_eq!(x.examples, y.examples);
        }
    }

    #[test]
    fn oracle_beats_eighty_percent_in_distribution() {
        let spec = SyntheticSpec::default();
        let bundle = generate_synthetic_suite(&spec).unwrap();
        let acc = oracle_accuracy(&spec, &bundle.train);
        assert!(acc > 80.0, "oracle accuracy {acc}");
        let in_split = bundle.splits_with_tag(Tag::In).next().unwrap();
        assert!(oracle_accuracy(&spec, in_split) > 80.0);
    }

    #[test]
    fn anomaly_vocabulary_is_disjoint_from_training() {
        let spec = SyntheticSpec::default();
        let bundle = generate_synthetic_suite(&spec).unwrap();
        let train_tokens: std::collections::BTreeSet<usize> = bundle
            .train
            .examples
            .iter()
            .flat_map(|e| e.tokens.iter().copied())
            .collect();
        let anomaly = bundle.splits_with_tag(Tag::Anomaly).next().unwrap();
        for e in &anomaly.examples {
            for t in &e.tokens {
                assert!(!train_tokens.contains(t), "token {t} leaked into anomalies");
            }
        }
    }

    #[test]
    fn shifted_background_is_disjoint_from_in_distribution_background() {
        let spec = SyntheticSpec::default();
        let (bg_in, bg_shift) = spec.background_ranges();
        assert!(bg_in.1 <= bg_shift.0);
    }

    #[test]
    fn jsonl_round_trip() {
        let spec = SyntheticSpec {
            train_size: 30,
            eval_size: 10,
            ..SyntheticSpec::default()
        };
        let bundle = generate_synthetic_suite(&spec).unwrap();
        let dir = std::env::temp_dir().join(format!("roast-data-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("in.jsonl");
        let split = bundle.splits_with_tag(Tag::In).next().unwrap();
        export_jsonl_split(split, &path).unwrap();
        let (back, warnings) =
            ingest_jsonl_dataset(&path, Tag::In, spec.vocab, spec.classes).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back.examples, split.examples);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn ingest_rejects_missing_label_with_line_number() {
        let dir = std::env::temp_dir().join(format!("roast-data-badlabel-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.jsonl");
        std::fs::write(&path, "{\"tokens\":[1,2],\"label\":0}\n{\"tokens\":[3,4]}\n").unwrap();
        let err = ingest_jsonl_dataset(&path, Tag::In, 10, 2).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn ingest_rejects_empty_file() {
        let dir = std::env::temp_dir().join(format!("roast-data-empty-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let err = ingest_jsonl_dataset(&path, Tag::In, 10, 2).unwrap_err();
        assert!(err.to_string().contains("empty split"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn ingest_rejects_out_of_vocabulary_tokens() {
        let dir = std::env::temp_dir().join(format!("roast-data-oov-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("oov.jsonl");
        std::fs::write(&path, "{\"tokens\":[1,10],\"label\":0}\n").unwrap();
        let err = ingest_jsonl_dataset(&path, Tag::In, 10, 2).unwrap_err();
        assert!(err.to_string().contains("vocab"), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn ingest_warns_on_labeled_anomalies() {
        let dir = std::env::temp_dir().join(format!("roast-data-anom-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("anomaly.jsonl");
        std::fs::write(&path, "{\"tokens\":[1,2],\"label\":1}\n").unwrap();
        let (split, warnings) = ingest_jsonl_dataset(&path, Tag::Anomaly, 10, 2).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(split.examples[0].label.is_none());
        std::fs::remove_dir_all(&dir).ok();
    }
}
