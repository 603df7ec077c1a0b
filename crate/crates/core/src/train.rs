//! Supervised training: joint cross-entropy, RAdam with decoupled weight
//! decay, linear warmup/decay, early stopping on the dev split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Dataset, Intensity, Polarity, ResponseRecord, Split};
use crate::embed::{build_table, EmbeddingProvider, EmbeddingTable};
use crate::graph::{build_graph, Ablation, GraphOptions, HeteroGraph};
use crate::hgt::{
    backward, compile, features_from_table, GraphIndex, HgtConfig, HgtError, Mode, Model, PairLogits,
    Topology,
};
use crate::metrics::{evaluate, macro_f1, micro_f1, EvalReport, MetricError, Prediction};
use crate::persona::LatentPersona;
use crate::rng::{mix64, SplitMix64};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptyTrain,
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("training diverged in epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("optimizer state has {state} entries, parameters {params}")]
    ShapeMismatch { state: usize, params: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] HgtError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>), TrainError> {
    if label >= logits.len() {
        return Err(TrainError::BadLabel {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let loss = total.ln() - (logits[label] - max);
    let mut grad: Vec<T> = exps.iter().map(|&e| e / total).collect();
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// Which head(s) contribute to the loss and to dev selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Joint,
    Polarity,
    Intensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub epsilon: f64,
    pub epochs: usize,
    pub patience: usize,
    pub warmup_ratio: f64,
    /// Training pairs per optimizer step.
    pub batch_size: usize,
    /// One optimizer step per epoch over all training pairs.
    pub full_batch: bool,
    pub seed: u64,
    pub task: Task,
    /// Stop as soon as training-set polarity accuracy reaches this value
    /// (fraction in `[0, 1]`).
    pub target_train_mif1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            weight_decay: 5e-4,
            betas: [0.9, 0.999],
            epsilon: 1e-8,
            epochs: 1000,
            patience: 300,
            warmup_ratio: 0.06,
            batch_size: 1,
            full_batch: false,
            seed: 42,
            task: Task::Joint,
            target_train_mif1: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    pub fn radam(&self) -> RAdamConfig {
        RAdamConfig {
            beta1: self.betas[0],
            beta2: self.betas[1],
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }
}

/// Learning rate after `step` optimizer steps: linear warmup from 0 over
/// `ceil(warmup_ratio * total)` steps, then linear decay to 0 at `total`.
pub fn lr_schedule(step: usize, total: usize, lr: f64, warmup_ratio: f64) -> f64 {
    let warmup = (warmup_ratio * total as f64).ceil() as usize;
    if step < warmup {
        lr * (step as f64 / warmup as f64)
    } else if step >= total {
        0.0
    } else {
        lr * ((total - step) as f64 / (total - warmup) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RAdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        TrainConfig::default().radam()
    }
}

/// Per-parameter moments and the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// Maximum length of the approximated simple moving average.
pub fn rho_inf(beta2: f64) -> f64 {
    2.0 / (1.0 - beta2) - 1.0
}

pub fn rho_t(beta2: f64, t: u64) -> f64 {
    let b = beta2.powi(t as i32);
    rho_inf(beta2) - 2.0 * t as f64 * b / (1.0 - b)
}

/// One RAdam update with decoupled weight decay.
///
/// The variance-rectified step is taken only when `rho_t > 4`; earlier
/// steps use the bias-corrected first moment alone. Weight decay always
/// uses the pre-update parameter.
pub fn radam_step<T: Scalar>(
    state: &mut OptimizerState<T>,
    params: &mut [T],
    grads: &[T],
    config: &RAdamConfig,
    lr: f64,
) -> Result<(), TrainError> {
    if state.m.len() != params.len() || grads.len() != params.len() {
        return Err(TrainError::ShapeMismatch {
            state: state.m.len(),
            params: params.len(),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient);
    }
    state.t += 1;
    let t = state.t;
    let (b1, b2) = (config.beta1, config.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let rho_inf = rho_inf(b2);
    let rho = rho_t(b2, t);
    let rect = if rho > 4.0 {
        Some((((rho - 4.0) * (rho - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt())
    } else {
        None
    };
    let (tb1, tb2) = (T::of(b1), T::of(b2));
    let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
    let (tbc1, tbc2) = (T::of(bc1), T::of(bc2));
    let decay = T::of(lr * config.weight_decay);
    let eps = T::of(config.epsilon);
    let tlr = T::of(lr);
    for i in 0..params.len() {
        let g = grads[i];
        let m = tb1 * state.m[i] + ob1 * g;
        let v = tb2 * state.v[i] + ob2 * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / tbc1;
        let theta = params[i];
        let update = match rect {
            Some(r) => T::of(r) * m_hat / ((v / tbc2).sqrt() + eps),
            None => m_hat,
        };
        params[i] = theta - decay * theta - tlr * update;
    }
    Ok(())
}

/// RAdam optimizer bound to a parameter count.
#[derive(Debug, Clone, PartialEq)]
pub struct RAdam<T> {
    pub config: RAdamConfig,
    pub state: OptimizerState<T>,
}

impl<T: Scalar> RAdam<T> {
    pub fn new(config: RAdamConfig, len: usize) -> Self {
        Self {
            config,
            state: OptimizerState::new(len),
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<(), TrainError> {
        radam_step(&mut self.state, params, grads, &self.config, lr)
    }
}

/// One row of `history.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch's steps.
    pub train_loss: f64,
    pub dev_r_s: f64,
    pub dev_r: f64,
    pub dev_mif1: f64,
    pub dev_maf1: f64,
    /// Learning rate at the end of the epoch.
    pub lr: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,dev_r_s,dev_r,dev_mif1,dev_maf1,lr";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{:.6},{:.4},{:.4},{:.4},{:.4},{:e}\n",
            r.epoch, r.train_loss, r.dev_r_s, r.dev_r, r.dev_mif1, r.dev_maf1, r.lr
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the best dev epoch.
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    /// 1-based.
    pub best_epoch: usize,
    pub best_score: f64,
    /// Polarity accuracy on the training pairs for the final epoch.
    pub final_train_mif1: f64,
}

fn argmax<T: Scalar>(x: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// Most likely classes; ties resolve to the lower index.
pub fn decode<T: Scalar>(logits: &PairLogits<T>) -> (Polarity, Intensity) {
    let p = Polarity::from_index(argmax(&logits.polarity)).expect("3 polarity classes");
    let i = Intensity::new(argmax(&logits.intensity) as u8).expect("4 intensity classes");
    (p, i)
}

fn resolve_pairs(index: &GraphIndex, records: &[&ResponseRecord]) -> Result<Vec<(usize, usize)>, HgtError> {
    records.iter().map(|r| index.pair(&r.user_id, &r.news_id)).collect()
}

/// Eval-mode predictions for `records`, in order.
pub fn predict<T: Scalar>(
    model: &Model<T>,
    index: &GraphIndex,
    features: &[T],
    records: &[&ResponseRecord],
) -> Result<Vec<Prediction>, HgtError> {
    let pairs = resolve_pairs(index, records)?;
    let out = model.forward(&index.topology, features, &pairs, Mode::Eval)?;
    Ok(records
        .iter()
        .zip(&out.logits)
        .map(|(r, l)| {
            let (polarity, intensity) = decode(l);
            Prediction {
                user_id: r.user_id.clone(),
                news_id: r.news_id.clone(),
                polarity,
                intensity,
            }
        })
        .collect())
}

fn selection_score(task: Task, report: &EvalReport) -> f64 {
    match task {
        Task::Joint => report.maf1 + report.r_s,
        Task::Polarity => report.maf1,
        Task::Intensity => report.r_s,
    }
}

/// Loss and loss gradient for a batch under `task`.
fn batch_loss<T: Scalar>(
    logits: &[PairLogits<T>],
    records: &[&ResponseRecord],
    task: Task,
) -> Result<(f64, Vec<PairLogits<T>>), TrainError> {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (l, r) in logits.iter().zip(records) {
        let mut g = PairLogits::zero();
        if task != Task::Intensity {
            let (loss, grad) = cross_entropy(&l.polarity, r.polarity.index())?;
            total += loss.as_f64();
            g.polarity.copy_from_slice(&grad);
        }
        if task != Task::Polarity {
            let (loss, grad) = cross_entropy(&l.intensity, r.intensity.index())?;
            total += loss.as_f64();
            g.intensity.copy_from_slice(&grad);
        }
        grads.push(g);
    }
    Ok((total, grads))
}

fn polarity_accuracy<T: Scalar>(
    model: &Model<T>,
    topology: &Topology,
    features: &[T],
    pairs: &[(usize, usize)],
    records: &[&ResponseRecord],
) -> Result<f64, TrainError> {
    let out = model.forward(topology, features, pairs, Mode::Eval)?;
    let pred: Vec<Polarity> = out.logits.iter().map(|l| decode(l).0).collect();
    let gold: Vec<Polarity> = records.iter().map(|r| r.polarity).collect();
    Ok(micro_f1(&gold, &pred)?)
}

/// Trains a model on the dataset's train split, selecting the epoch with the
/// best dev score. Without dev samples, selection uses the negated training
/// loss. The run is a pure function of its inputs and `config.seed`.
pub fn train<T: Scalar>(
    index: &GraphIndex,
    features: &[T],
    dataset: &Dataset,
    hgt: &HgtConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    let train_records = dataset.split(Split::Train);
    if train_records.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    let dev_records = dataset.split(Split::Dev);
    let topology = &index.topology;
    let train_pairs = resolve_pairs(index, &train_records)?;

    let mut model: Model<T> = Model::new(*hgt, config.seed)?;
    let mut opt = RAdam::new(config.radam(), model.params.len());
    let n = train_records.len();
    let batch = if config.full_batch { n } else { config.batch_size.min(n) };
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = steps_per_epoch * config.epochs;

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model<T>)> = None;
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    let mut final_train_mif1 = 0.0;
    let mut lr = 0.0;

    for epoch in 1..=config.epochs {
        let mut rng = SplitMix64::keyed(config.seed, epoch as u64);
        for i in (1..n).rev() {
            order.swap(i, rng.below(i as u64 + 1) as usize);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let pairs: Vec<(usize, usize)> = chunk.iter().map(|&i| train_pairs[i]).collect();
            let records: Vec<&ResponseRecord> = chunk.iter().map(|&i| train_records[i]).collect();
            let mode = Mode::Train {
                seed: mix64(config.seed ^ mix64(step as u64)),
            };
            let out = match model.forward(topology, features, &pairs, mode) {
                Err(HgtError::NonFinite { .. }) => return Err(TrainError::Divergence { epoch }),
                r => r?,
            };
            let (loss, loss_grad) = batch_loss(&out.logits, &records, config.task)?;
            if !loss.is_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            epoch_loss += loss;
            let grads = backward(&out.trace, topology, &model.params, &model.config, &loss_grad)?;
            lr = lr_schedule(step, total_steps, config.learning_rate, config.warmup_ratio);
            opt.step(model.params.data_mut(), grads.data(), lr)?;
            step += 1;
        }
        let train_loss = epoch_loss / n as f64;

        let dev_report = if dev_records.is_empty() {
            None
        } else {
            let preds = predict(&model, index, features, &dev_records).map_err(|e| match e {
                HgtError::NonFinite { .. } => TrainError::Divergence { epoch },
                e => e.into(),
            })?;
            Some(evaluate(&preds, &dev_records)?)
        };
        let empty = EvalReport {
            n_samples: 0,
            r_s: 0.0,
            r: 0.0,
            mif1: 0.0,
            maf1: 0.0,
            r_s_degenerate: true,
            r_degenerate: true,
            failures: None,
            lurkers: None,
            unseen: None,
            by_belief: None,
        };
        let dev = dev_report.as_ref().unwrap_or(&empty);
        let score = match &dev_report {
            Some(r) => selection_score(config.task, r),
            None => -train_loss,
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            dev_r_s: dev.r_s,
            dev_r: dev.r,
            dev_mif1: dev.mif1,
            dev_maf1: dev.maf1,
            lr,
        });
        log::debug!("epoch {epoch}: loss {train_loss:.4}, dev score {score:.2}");

        if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
            best = Some((score, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if let Some(target) = config.target_train_mif1 {
            final_train_mif1 = polarity_accuracy(&model, topology, features, &train_pairs, &train_records)?;
            if final_train_mif1 >= target {
                best = Some((score, epoch, model.clone()));
                break;
            }
        }
        if since_best >= config.patience {
            break;
        }
    }
    if config.target_train_mif1.is_none() {
        final_train_mif1 = polarity_accuracy(&model, topology, features, &train_pairs, &train_records)?;
    }
    let (best_score, best_epoch, model) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_score,
        final_train_mif1,
    })
}

/// Graph, compiled index and feature matrix for one ablation setting.
pub struct Prepared<T> {
    pub graph: HeteroGraph,
    pub index: GraphIndex,
    pub table: EmbeddingTable,
    pub features: Vec<T>,
}

/// Builds everything [`train`] consumes from raw inputs.
pub fn prepare<T: Scalar>(
    dataset: &Dataset,
    personas: &[LatentPersona],
    ablation: &Ablation,
    influencers: Option<usize>,
    provider: &dyn EmbeddingProvider,
    seed: u64,
) -> Result<Prepared<T>, TrainError> {
    let options = GraphOptions {
        ablation: *ablation,
        influencers,
    };
    let graph = build_graph(dataset, personas, &options)?;
    let table = build_table(&graph, dataset, provider, ablation, seed)?;
    let index = compile(&graph);
    let features = features_from_table(&index, &table)?;
    Ok(Prepared {
        graph,
        index,
        table,
        features,
    })
}

/// Polarity accuracy and macro-F1 of predictions, as fractions.
pub fn polarity_scores(predictions: &[Prediction], gold: &[&ResponseRecord]) -> Result<(f64, f64), MetricError> {
    let p: Vec<Polarity> = predictions.iter().map(|x| x.polarity).collect();
    let g: Vec<Polarity> = gold.iter().map(|x| x.polarity).collect();
    Ok((micro_f1(&g, &p)?, macro_f1(&g, &p)?))
}

/// Beliefs per user as held in a graph; input to per-belief evaluation.
pub fn beliefs_by_user(graph: &HeteroGraph) -> BTreeMap<String, Vec<crate::graph::BeliefId>> {
    let mut out: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for (u, b) in graph.belief_edges() {
        out.entry(u.clone()).or_default().push(*b);
    }
    out
}
