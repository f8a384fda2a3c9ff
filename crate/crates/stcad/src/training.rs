//! End-to-end training: dataset assembly, the joint discriminative plus
//! contextual objective, mini-batch Adam, and periodic evaluation.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use rayon::prelude::*;

use crate::features::{FeatureConfig, FeatureExtractor, PageRankCache, SampleFeatures};
use crate::graph::{DynamicGraph, GraphError, NodeId, Snapshot};
use crate::metrics::{evaluate, EvalResult, MetricsError};
use crate::model::{Model, ModelConfig, ModelError};
use crate::sampler::{
    build_test_set, build_test_set_with, build_training_set, EdgeSample, SampleError,
};
use crate::seed::derived_rng;
use crate::tensor::{AdamConfig, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad training config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Optimization and data-split hyperparameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the contextual loss.
    pub lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Anomaly injection rate of the test set.
    pub inject_rate: f64,
    /// Fraction of snapshots before the train/test boundary.
    pub split_fraction: f64,
    /// Fraction of the training span actually used (1.0 = all of it).
    pub train_ratio: f64,
    /// Evaluate on the test set every this many epochs.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            epochs: 300,
            lr: 0.001,
            lambda: 1.0,
            batch_size: 128,
            seed: 0,
            inject_rate: 0.1,
            split_fraction: 0.5,
            train_ratio: 1.0,
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(TrainError::Config("zero-sized epoch/batch/eval".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0) {
            return Err(TrainError::Config(format!(
                "train_ratio {} outside (0, 1]",
                self.train_ratio
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(TrainError::Config(format!("negative lambda {}", self.lambda)));
        }
        Ok(())
    }
}

/// Samples with their precomputed feature sequences.
pub struct Dataset {
    pub train: Vec<(EdgeSample, SampleFeatures)>,
    pub test: Vec<(EdgeSample, SampleFeatures)>,
}

fn attach_features(
    samples: Vec<EdgeSample>,
    extractor: &FeatureExtractor,
) -> Vec<(EdgeSample, SampleFeatures)> {
    samples
        .into_par_iter()
        .map(|s| {
            let f = extractor.sample_features(&s);
            (s, f)
        })
        .collect()
}

/// Build train and test sets with uniformly drawn negatives.
pub fn build_dataset(
    graph: &DynamicGraph,
    snapshots: &[Snapshot],
    cfg: &TrainConfig,
    feature_cfg: &FeatureConfig,
) -> Result<Dataset, TrainError> {
    let c = cfg.model.context;
    let t = cfg.model.window;
    let train = build_training_set(
        graph,
        snapshots,
        cfg.split_fraction * cfg.train_ratio,
        c,
        t,
        cfg.seed,
    )?;
    let test = build_test_set(
        graph,
        snapshots,
        cfg.split_fraction,
        cfg.inject_rate,
        c,
        t,
        cfg.seed,
    )?;
    let cache = PageRankCache::build(snapshots, feature_cfg);
    let extractor = FeatureExtractor::new(snapshots, &cache, *feature_cfg);
    Ok(Dataset {
        train: attach_features(train, &extractor),
        test: attach_features(test, &extractor),
    })
}

/// Like [`build_dataset`] but with a caller-supplied test-set anomaly source
/// (window end and injection ordinal in, absent pair out).
pub fn build_dataset_with<F>(
    graph: &DynamicGraph,
    snapshots: &[Snapshot],
    cfg: &TrainConfig,
    feature_cfg: &FeatureConfig,
    draw_negative: F,
) -> Result<Dataset, TrainError>
where
    F: FnMut(usize, usize) -> Result<(NodeId, NodeId), SampleError>,
{
    let c = cfg.model.context;
    let t = cfg.model.window;
    let train = build_training_set(
        graph,
        snapshots,
        cfg.split_fraction * cfg.train_ratio,
        c,
        t,
        cfg.seed,
    )?;
    let test = build_test_set_with(
        snapshots,
        cfg.split_fraction,
        cfg.inject_rate,
        c,
        t,
        cfg.seed,
        draw_negative,
    )?;
    let cache = PageRankCache::build(snapshots, feature_cfg);
    let extractor = FeatureExtractor::new(snapshots, &cache, *feature_cfg);
    Ok(Dataset {
        train: attach_features(train, &extractor),
        test: attach_features(test, &extractor),
    })
}

/// Per-epoch loss means.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub discriminative: f64,
    pub contextual: f64,
}

/// One periodic test-set evaluation.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub auc: f64,
    pub ap: f64,
}

/// What the training loop observed.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub evals: Vec<EvalPoint>,
    /// Best periodic evaluation by AUC (ties: AP, then earlier epoch); the
    /// returned model carries these weights.
    pub best: EvalPoint,
    pub n_train: usize,
    pub n_test: usize,
}

/// Trained model plus its report.
pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
}

/// Scalar losses of one sample.
struct SampleLoss {
    total: f64,
    dis: f64,
    con: f64,
    grads: Vec<Vec<f64>>,
}

fn sample_loss(
    model: &Model,
    feats: &SampleFeatures,
    label: u8,
    mask_index: usize,
    lambda: f64,
) -> Result<SampleLoss, TrainError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let input = model.input_sequence(&mut tape, &bound, feats)?;
    let encoded = model.encode(&mut tape, &bound, input, None)?;
    let emb = model.edge_embedding(&mut tape, encoded);
    let score = model.score_edge(&mut tape, &bound, emb)?;
    let dis = tape.bce_scalar(score, label as f64)?;

    let total = if model.config.use_contextual_loss && lambda > 0.0 {
        let rec = model.mask_and_reconstruct(&mut tape, &bound, input, mask_index)?;
        let con = tape.kl_rows(input, rec)?;
        let weighted = tape.scale(con, lambda);
        let sum = tape.add(dis, weighted)?;
        tape.backward(sum)?;
        SampleLoss {
            total: tape.value_scalar(sum),
            dis: tape.value_scalar(dis),
            con: tape.value_scalar(con),
            grads: bound
                .bindings
                .iter()
                .map(|&(_, tid)| tape.grad(tid).to_vec())
                .collect(),
        }
    } else {
        tape.backward(dis)?;
        SampleLoss {
            total: tape.value_scalar(dis),
            dis: tape.value_scalar(dis),
            con: 0.0,
            grads: bound
                .bindings
                .iter()
                .map(|&(_, tid)| tape.grad(tid).to_vec())
                .collect(),
        }
    };
    Ok(total)
}

/// Mean test-set scores under the current weights.
pub fn score_test_set(
    model: &Model,
    test: &[(EdgeSample, SampleFeatures)],
) -> Result<(Vec<f64>, Vec<u8>), TrainError> {
    let scores: Result<Vec<f64>, ModelError> = test
        .par_iter()
        .map(|(_, feats)| model.score_sample(feats))
        .collect();
    let labels = test.iter().map(|(s, _)| s.label).collect();
    Ok((scores?, labels))
}

/// Evaluate the model on the test split.
pub fn evaluate_model(
    model: &Model,
    test: &[(EdgeSample, SampleFeatures)],
    inject_rate: f64,
) -> Result<EvalResult, TrainError> {
    let (scores, labels) = score_test_set(model, test)?;
    Ok(evaluate(&scores, &labels, inject_rate)?)
}

/// Mini-batch Adam over the joint objective. Periodic evaluations track the
/// best epoch; the returned model carries the best-epoch weights.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    if dataset.test.is_empty() {
        return Err(TrainError::Config("empty test set".into()));
    }
    let mut model = Model::new(cfg.model, cfg.seed)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let k = cfg.model.seq_len();

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut evals: Vec<EvalPoint> = Vec::new();
    let mut best: Option<EvalPoint> = None;
    let mut best_params = model.params.clone();

    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = derived_rng(cfg.seed, "shuffle", &[epoch as u64]);
        order.shuffle(&mut rng);
        // fresh mask position per sequence per epoch
        let masks: Vec<usize> = (0..dataset.train.len())
            .map(|i| {
                derived_rng(cfg.seed, "mask", &[epoch as u64, i as u64]).gen_range(0..k)
            })
            .collect();

        let (mut sum_total, mut sum_dis, mut sum_con) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let losses: Result<Vec<SampleLoss>, TrainError> = batch
                .par_iter()
                .map(|&i| {
                    let (sample, feats) = &dataset.train[i];
                    sample_loss(&model, feats, sample.label, masks[i], cfg.lambda)
                })
                .collect();
            let losses = losses?;
            let inv = 1.0 / batch.len() as f64;
            for loss in &losses {
                sum_total += loss.total;
                sum_dis += loss.dis;
                sum_con += loss.con;
                model.params.add_scaled_grads(&loss.grads, inv);
            }
            model.params.adam_step(&adam);
        }
        let n = dataset.train.len() as f64;
        epochs.push(EpochStats {
            epoch,
            loss: sum_total / n,
            discriminative: sum_dis / n,
            contextual: sum_con / n,
        });

        if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
            let result = evaluate_model(&model, &dataset.test, cfg.inject_rate)?;
            let point = EvalPoint {
                epoch,
                auc: result.auc,
                ap: result.ap,
            };
            evals.push(point);
            let better = match best {
                None => true,
                Some(b) => point.auc > b.auc || (point.auc == b.auc && point.ap > b.ap),
            };
            if better {
                best = Some(point);
                best_params = model.params.clone();
            }
        }
    }

    let best = best.expect("at least one evaluation ran");
    model.params = best_params;
    Ok(TrainOutcome {
        model,
        report: TrainReport {
            epochs,
            evals,
            best,
            n_train: dataset.train.len(),
            n_test: dataset.test.len(),
        },
    })
}
