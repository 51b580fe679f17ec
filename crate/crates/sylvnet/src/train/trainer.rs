//! The training loop: seeded init, row-batched masked-MSE steps, Adam with
//! decoupled weight decay, early stopping on validation RMSE.

use super::report::{EpochRecord, RunReport};
use super::TrainError;
use crate::data::{
    symmetric_normalize, Network, NormalizedNetwork, PriorAssociation, RatingSplit,
};
use crate::diff::{adam_step, AdamConfig, AdamState, ParamSet, Tape};
use crate::model::{
    BaseInputs, BaseModel, LowRankInputs, LowRankModel, ModelSpec, ParamNodes, PriorIndicators,
};
use crate::sparse::CsrMatrix;
use crate::Mat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Instant;

/// Everything one training run consumes.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub net1: Network,
    pub net2: Network,
    pub norm1: NormalizedNetwork,
    pub norm2: NormalizedNetwork,
    pub prior: PriorAssociation,
    pub split: RatingSplit,
}

impl DataBundle {
    /// Normalizes both networks and validates the split against the prior.
    pub fn new(
        net1: Network,
        net2: Network,
        prior: PriorAssociation,
        split: RatingSplit,
    ) -> Result<Self, TrainError> {
        if prior.n1() != net1.n || prior.n2() != net2.n {
            return Err(TrainError::Invalid(format!(
                "prior is {}x{} but networks have {} and {} nodes",
                prior.n1(),
                prior.n2(),
                net1.n,
                net2.n
            )));
        }
        split.validate(&prior)?;
        let norm1 = symmetric_normalize(&net1)?;
        let norm2 = symmetric_normalize(&net2)?;
        Ok(Self { net1, net2, norm1, norm2, prior, split })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Rows of network 1 per step; 0 trains full-batch.
    pub batch_rows: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Early-stop after this many epochs without validation improvement;
    /// 0 disables early stopping.
    pub patience: usize,
    /// Divide the squared-error loss by the train observation count so the
    /// learning rate is batch-size-invariant.
    pub normalize_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_rows: 0,
            lr: 1e-3,
            weight_decay: 0.01,
            seed: 0,
            patience: 30,
            normalize_loss: true,
        }
    }
}

enum ModelKind {
    Base(BaseModel),
    LowRank(LowRankModel),
}

struct Prepared {
    kind: ModelKind,
    a1: Arc<CsrMatrix>,
    a2: Arc<CsrMatrix>,
    train_prior: PriorAssociation,
    h_prior: Option<Arc<Mat>>,
    indicators: Option<PriorIndicators>,
    train_entries: Arc<Vec<(usize, usize, f64)>>,
}

fn prepare(spec: &ModelSpec, bundle: &DataBundle) -> Result<Prepared, TrainError> {
    let train_prior = bundle.prior.restricted_to(&bundle.split.train_mask);
    if train_prior.observed_count == 0 {
        return Err(TrainError::Invalid("train mask has no observations".into()));
    }
    let a1 = Arc::new(bundle.norm1.adjacency.clone());
    let a2 = Arc::new(bundle.norm2.adjacency.clone());
    let train_entries = Arc::new(train_prior.observed_entries());
    match spec {
        ModelSpec::Base(cfg) => {
            let model = BaseModel::new(cfg.clone(), bundle.net1.d, bundle.net2.d)?;
            let h_prior = model.prior_input(&train_prior)?;
            Ok(Prepared {
                kind: ModelKind::Base(model),
                a1,
                a2,
                train_prior,
                h_prior,
                indicators: None,
                train_entries,
            })
        }
        ModelSpec::LowRank(cfg) => {
            if cfg.branches.prior && cfg.num_classes != bundle.prior.classes.len() {
                return Err(TrainError::Invalid(format!(
                    "model expects {} rating classes but the data has {}",
                    cfg.num_classes,
                    bundle.prior.classes.len()
                )));
            }
            let model = LowRankModel::new(cfg.clone(), bundle.net1.d, bundle.net2.d)?;
            let indicators =
                cfg.branches.prior.then(|| PriorIndicators::build(&train_prior));
            Ok(Prepared {
                kind: ModelKind::LowRank(model),
                a1,
                a2,
                train_prior,
                h_prior: None,
                indicators,
                train_entries,
            })
        }
    }
}

/// Clips a prediction into the rating class range.
fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    v.clamp(lo, hi)
}

/// RMSE of clipped predictions against `prior.h` over `mask`. Predictions
/// are clipped into the prior's class range first.
pub fn masked_rmse(pred: &Mat, prior: &PriorAssociation, mask: &Mat) -> Result<f64, TrainError> {
    let (lo, hi) = (prior.class_min(), prior.class_max());
    let mut acc = 0.0;
    let mut count = 0usize;
    for ((i, j), &m) in mask.indexed_iter() {
        if m == 1.0 {
            let e = prior.h[[i, j]] - clip(pred[[i, j]], lo, hi);
            acc += e * e;
            count += 1;
        }
    }
    if count == 0 {
        return Err(TrainError::EmptyMask);
    }
    Ok((acc / count as f64).sqrt())
}

/// Full clipped prediction matrix for the trained model.
pub fn predictions(
    spec: &ModelSpec,
    params: &ParamSet,
    bundle: &DataBundle,
) -> Result<Mat, TrainError> {
    let prepared = prepare(spec, bundle)?;
    let raw = raw_predictions(&prepared, params, bundle)?;
    let (lo, hi) = (bundle.prior.class_min(), bundle.prior.class_max());
    Ok(raw.mapv(|v| clip(v, lo, hi)))
}

fn raw_predictions(
    prepared: &Prepared,
    params: &ParamSet,
    bundle: &DataBundle,
) -> Result<Mat, TrainError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let pnodes = ParamNodes::new(params, &bound);
    match &prepared.kind {
        ModelKind::Base(model) => {
            let inputs = BaseInputs {
                f1: &bundle.net1.features,
                f2: &bundle.net2.features,
                a1: prepared.a1.clone(),
                a2: prepared.a2.clone(),
                h_prior: prepared.h_prior.clone(),
            };
            let out = model.forward(&mut tape, &inputs, &pnodes, None)?;
            Ok(tape.value(out).clone())
        }
        ModelKind::LowRank(model) => {
            let inputs = LowRankInputs {
                f1: &bundle.net1.features,
                f2: &bundle.net2.features,
                a1: prepared.a1.clone(),
                a2: prepared.a2.clone(),
                indicators: prepared.indicators.as_ref(),
            };
            let out = model.forward(&mut tape, &inputs, &pnodes)?;
            let scale = tape.value(out.scale)[[0, 0]];
            let shift = tape.value(out.shift)[[0, 0]];
            let u1 = tape.value(out.u1);
            let u2 = tape.value(out.u2);
            Ok(u1.dot(&u2.t()).mapv(|v| scale * v + shift))
        }
    }
}

/// RMSE of the model's clipped predictions over `mask`.
pub fn evaluate_rmse(
    spec: &ModelSpec,
    params: &ParamSet,
    bundle: &DataBundle,
    mask: &Mat,
) -> Result<f64, TrainError> {
    let prepared = prepare(spec, bundle)?;
    let raw = raw_predictions(&prepared, params, bundle)?;
    masked_rmse(&raw, &bundle.prior, mask)
}

/// Trains a model from scratch. Deterministic for a fixed (spec, bundle,
/// config) triple: the seed drives initialization and batch order, and every
/// kernel is deterministic.
pub fn train(
    spec: &ModelSpec,
    bundle: &DataBundle,
    cfg: &TrainConfig,
) -> Result<(ParamSet, RunReport), TrainError> {
    let start = Instant::now();
    let prepared = prepare(spec, bundle)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n1 = bundle.net1.n;

    let mut params = match &prepared.kind {
        ModelKind::Base(model) => model.init_params(n1, bundle.net2.n, &mut rng),
        ModelKind::LowRank(model) => model.init_params(n1, bundle.net2.n, &mut rng),
    };
    // Start calibrated at the global train mean so the first predictions sit
    // at the average rating.
    let mean_rating = prepared
        .train_entries
        .iter()
        .map(|&(_, _, h)| h)
        .sum::<f64>()
        / prepared.train_entries.len() as f64;
    params.get_mut("out.shift").expect("models define out.shift").value[[0, 0]] = mean_rating;

    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(&params, adam_cfg);

    let normalizer = if cfg.normalize_loss {
        prepared.train_entries.len() as f64
    } else {
        1.0
    };
    let full_h = Arc::new(prepared.train_prior.h.clone());
    let full_mask = Arc::new(prepared.train_prior.mask.clone());
    // Per-row train entries, for slicing batched losses.
    let mut rows_entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n1];
    for &(i, j, h) in prepared.train_entries.iter() {
        rows_entries[i].push((j, h));
    }

    let val_nonempty = bundle.split.val_mask.iter().any(|&m| m == 1.0);
    let val_mask = if val_nonempty { &bundle.split.val_mask } else { &bundle.split.train_mask };

    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut stale_epochs = 0usize;
    let mut peak_elems = 0usize;

    let full_batch = cfg.batch_rows == 0 || cfg.batch_rows >= n1;
    let mut row_order: Vec<usize> = (0..n1).collect();

    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0;
        let batches: Vec<Option<Arc<Vec<usize>>>> = if full_batch {
            vec![None]
        } else {
            row_order.shuffle(&mut rng);
            row_order
                .chunks(cfg.batch_rows)
                .map(|chunk| Some(Arc::new(chunk.to_vec())))
                .collect()
        };
        for batch in batches {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let pnodes = ParamNodes::new(&params, &bound);
            let loss_node = match &prepared.kind {
                ModelKind::Base(model) => {
                    let inputs = BaseInputs {
                        f1: &bundle.net1.features,
                        f2: &bundle.net2.features,
                        a1: prepared.a1.clone(),
                        a2: prepared.a2.clone(),
                        h_prior: prepared.h_prior.clone(),
                    };
                    let pred = model.forward(&mut tape, &inputs, &pnodes, batch.as_ref())?;
                    let (target, mask) = match &batch {
                        None => (full_h.clone(), full_mask.clone()),
                        Some(rows) => {
                            let n2 = bundle.net2.n;
                            let mut t = Mat::zeros((rows.len(), n2));
                            let mut m = Mat::zeros((rows.len(), n2));
                            for (k, &r) in rows.iter().enumerate() {
                                for &(j, h) in &rows_entries[r] {
                                    t[[k, j]] = h;
                                    m[[k, j]] = 1.0;
                                }
                            }
                            (Arc::new(t), Arc::new(m))
                        }
                    };
                    tape.masked_mse(pred, target, mask, normalizer)?
                }
                ModelKind::LowRank(model) => {
                    let inputs = LowRankInputs {
                        f1: &bundle.net1.features,
                        f2: &bundle.net2.features,
                        a1: prepared.a1.clone(),
                        a2: prepared.a2.clone(),
                        indicators: prepared.indicators.as_ref(),
                    };
                    let out = model.forward(&mut tape, &inputs, &pnodes)?;
                    let entries = match &batch {
                        None => prepared.train_entries.clone(),
                        Some(rows) => Arc::new(
                            rows.iter()
                                .flat_map(|&r| {
                                    rows_entries[r].iter().map(move |&(j, h)| (r, j, h))
                                })
                                .collect::<Vec<_>>(),
                        ),
                    };
                    tape.masked_dot_mse(out.u1, out.u2, out.scale, out.shift, entries, normalizer)?
                }
            };
            let loss = tape.value(loss_node)[[0, 0]];
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, loss });
            }
            epoch_loss += loss;
            tape.backward(loss_node)?;
            let grads = bound.grads(&tape);
            peak_elems = peak_elems.max(tape.value_elems());
            drop(tape);
            adam_step(&mut params, &grads, &mut adam);
        }

        let raw = raw_predictions(&prepared, &params, bundle)?;
        let val_rmse = masked_rmse(&raw, &bundle.prior, val_mask)?;
        history.push(EpochRecord { epoch, train_loss: epoch_loss, val_rmse });
        if val_rmse < best_val {
            best_val = val_rmse;
            best_params = params.clone();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if cfg.patience > 0 && stale_epochs >= cfg.patience {
                break;
            }
        }
    }

    // Epochs = 0 still reports the (mean-calibrated) initial model.
    if history.is_empty() {
        let raw = raw_predictions(&prepared, &params, bundle)?;
        best_val = masked_rmse(&raw, &bundle.prior, val_mask)?;
        best_params = params.clone();
    }

    let test_nonempty = bundle.split.test_mask.iter().any(|&m| m == 1.0);
    let test_rmse = if test_nonempty {
        let raw = raw_predictions(&prepared, &best_params, bundle)?;
        Some(masked_rmse(&raw, &bundle.prior, &bundle.split.test_mask)?)
    } else {
        None
    };

    let report = RunReport {
        model: spec.name().to_string(),
        seed: cfg.seed,
        epochs_run: history.len(),
        history,
        best_val_rmse: best_val,
        test_rmse,
        param_count: best_params.total_elems(),
        peak_activation_elems: peak_elems,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((best_params, report))
}
