use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mixup::mixup_with_lambda;
use super::mixup::sample_beta;
use super::model::{backward, forward, predict_scores, softmax_cross_entropy, Architecture, Mode, ModelParams, GENUINE_CLASS};
use super::optim::{Optimizer, OptimizerKind};
use super::tensor::Real;
use crate::error::{Error, Result};
use crate::map::AcousticMap;
use crate::sim::LabeledMap;

/// Arithmetic used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub mixup_alpha: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Stop after the first epoch whose training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            mixup_alpha: 0.05,
            seed: 0,
            precision: Precision::F32,
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::InvalidInput("epochs must be ≥ 1 and batch size ≥ 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.mixup_alpha > 0.0 && self.mixup_alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("mixup alpha must be positive, got {}", self.mixup_alpha)));
        }
        Ok(())
    }
}

/// One flattened map (`[band][az][el]`) with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f32>,
    pub label: usize,
}

/// Maps of a common shape `(bands, azimuths, elevations)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: (usize, usize, usize),
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(shape: (usize, usize, usize), examples: Vec<Example>) -> Result<Self> {
        let n = shape.0 * shape.1 * shape.2;
        for (i, e) in examples.iter().enumerate() {
            if e.input.len() != n {
                return Err(Error::Shape(format!("example {i} has {} values, expected {n}", e.input.len())));
            }
            if e.label > 1 {
                return Err(Error::InvalidInput(format!("example {i} has label {} (expected 0 or 1)", e.label)));
            }
            if e.input.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("example {i} has non-finite values")));
            }
        }
        Ok(Self { shape, examples })
    }

    pub fn from_maps<'a>(maps: impl IntoIterator<Item = (&'a AcousticMap, usize)>) -> Result<Self> {
        let mut shape = None;
        let mut examples = Vec::new();
        for (m, label) in maps {
            let s = m.shape();
            if *shape.get_or_insert(s) != s {
                return Err(Error::Shape(format!("map shape {s:?} differs from {:?}", shape.unwrap())));
            }
            examples.push(Example { input: m.to_f32(), label });
        }
        let shape = shape.ok_or_else(|| Error::InvalidInput("no maps".into()))?;
        Self::new(shape, examples)
    }

    pub fn from_labeled(maps: &[LabeledMap]) -> Result<Self> {
        Self::from_maps(maps.iter().map(|m| (&m.map, m.label)))
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Count per class `[0, 1]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0, 0];
        for e in &self.examples {
            c[e.label] += 1;
        }
        c
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            shape: self.shape,
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    fn gather<T: Real>(&self, idx: &[usize]) -> Vec<T> {
        let mut out = Vec::with_capacity(idx.len() * self.shape.0 * self.shape.1 * self.shape.2);
        for &i in idx {
            out.extend(self.examples[i].input.iter().map(|&v| T::lit(v as f64)));
        }
        out
    }

    /// Network shape matching this dataset.
    pub fn architecture(&self) -> Architecture {
        Architecture::for_input(self.shape.0, self.shape.1, self.shape.2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean MixUp training loss over the epoch's batches.
    pub loss: f64,
    /// Eval-mode accuracy on the (un-mixed) training set.
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    pub validation_eer: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub history: History,
}

const EVAL_CHUNK: usize = 64;

/// Genuine-class probability for every example, in order.
pub fn dataset_scores<T: Real>(params: &ModelParams<T>, data: &Dataset) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        out.extend(predict_scores(params, &data.gather::<T>(chunk), chunk.len())?);
    }
    Ok(out)
}

/// Fraction of examples whose score falls on the side of 0.5 given by their label.
pub fn accuracy(scores: &[f64], labels: &[usize]) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= 0.5) == (l == GENUINE_CLASS))
        .count();
    hits as f64 / scores.len().max(1) as f64
}

fn split_by_label(scores: &[f64], labels: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut genuine = Vec::new();
    let mut replay = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l == GENUINE_CLASS {
            genuine.push(s);
        } else {
            replay.push(s);
        }
    }
    (genuine, replay)
}

/// Mini-batch training with MixUp inside each shuffled batch.
///
/// Streams of one ChaCha generator seeded with `cfg.seed`: 0 draws the initial
/// weights, 1 the epoch shuffles and MixUp partners and weights. A trailing batch of
/// one example is skipped, since batch norm needs two.
pub fn train<T: Real>(arch: &Architecture, data: &Dataset, validation: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let counts = data.class_counts();
    if counts.contains(&0) {
        return Err(Error::InvalidInput(format!(
            "training set has a single class (counts {counts:?})"
        )));
    }
    let shape = data.shape();
    if (arch.in_bands, arch.height, arch.width) != shape {
        return Err(Error::Shape(format!(
            "architecture expects {}×{}×{} maps, data is {shape:?}",
            arch.in_bands, arch.height, arch.width
        )));
    }
    if let Some(v) = validation {
        if v.shape() != shape {
            return Err(Error::Shape("validation maps differ in shape from training maps".into()));
        }
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut params = ModelParams::<T>::init(arch, &mut init_rng)?;
    let mut opt = Optimizer::<T>::new(cfg.optimizer, cfg.learning_rate);
    let k = arch.n_classes;
    let labels = data.labels();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let b = batch.len();
            if b < 2 {
                continue;
            }
            let x = data.gather::<T>(batch);
            let mut y = vec![T::zero(); b * k];
            for (r, &i) in batch.iter().enumerate() {
                y[r * k + labels[i]] = T::one();
            }
            let mut partner: Vec<usize> = (0..b).collect();
            partner.shuffle(&mut rng);
            let lambda = sample_beta(cfg.mixup_alpha, &mut rng)?;
            let row = arch.input_len();
            let x_b: Vec<T> = partner.iter().flat_map(|&p| x[p * row..(p + 1) * row].iter().copied()).collect();
            let y_b: Vec<T> = partner.iter().flat_map(|&p| y[p * k..(p + 1) * k].iter().copied()).collect();
            let (xm, ym) = mixup_with_lambda(&x, &y, &x_b, &y_b, lambda)?;

            let pass = forward(&params, &xm, b, Mode::Train)?;
            let (loss, dlogits) = softmax_cross_entropy(&pass.logits, &ym, k)?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {bi} (mixup weight {lambda:.4})"
                )));
            }
            let grads = backward(&params, &pass, &dlogits)?;
            opt.step(&mut params, &grads);
            params.update_running_stats(&pass);
            if !params.all_finite() {
                return Err(Error::Numerical(format!("parameters diverged at epoch {epoch}, batch {bi}")));
            }
            loss_sum += loss;
            n_batches += 1;
        }
        let train_accuracy = accuracy(&dataset_scores(&params, data)?, &labels);
        let (validation_accuracy, validation_eer) = match validation {
            Some(v) => {
                let s = dataset_scores(&params, v)?;
                let vl = v.labels();
                let (g, r) = split_by_label(&s, &vl);
                let eer = crate::eval::compute_eer(&g, &r).map(|e| e.eer).ok();
                (Some(accuracy(&s, &vl)), eer)
            }
            None => (None, None),
        };
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / n_batches.max(1) as f64,
            train_accuracy,
            validation_accuracy,
            validation_eer,
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, train acc {:.3}{}",
            rec.loss,
            rec.train_accuracy,
            rec.validation_accuracy.map(|a| format!(", val acc {a:.3}")).unwrap_or_default()
        );
        history.epochs.push(rec);
        if cfg.target_train_accuracy.is_some_and(|t| train_accuracy >= t) {
            history.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    Ok(TrainOutcome { params, history })
}

/// Trains at `cfg.precision` and returns `f32` parameters.
pub fn train_model(arch: &Architecture, data: &Dataset, validation: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome<f32>> {
    match cfg.precision {
        Precision::F32 => train::<f32>(arch, data, validation, cfg),
        Precision::F64 => {
            let out = train::<f64>(arch, data, validation, cfg)?;
            Ok(TrainOutcome {
                params: out.params.cast(),
                history: out.history,
            })
        }
    }
}
