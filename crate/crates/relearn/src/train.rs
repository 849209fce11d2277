//! The training loop: per-epoch augmentation, triplet sampling (random or
//! in-batch hard-negative), Adam updates, learning-rate halving, and early
//! stopping.
//!
//! Two validation signals drive the schedule, as the protocol defines them
//! separately: validation *loss* (over a fixed, seeded triplet set) halves
//! the learning rate after `lr_halve_patience` epochs without a decrease,
//! while validation *performance* (the strategy-1 Sum metric on
//! un-augmented features) stops training after `early_stop_patience`
//! epochs without an improvement. The returned model is the snapshot with
//! the best validation Sum, not the final epoch's.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::augment::{augment_multilevel, estimate_noise_stats, AugmentConfig};
use crate::datamodel::{Dataset, FeatureVector, RelevanceTable, Split, VideoId};
use crate::error::{Error, Result};
use crate::eval::{evaluate, StrategySpec};
use crate::model::{
    batch_loss, cosine_similarity, loss_gradients, Gradients, LossConfig, LossKind,
    ProjectionModel, TripletBatch,
};

/// Everything the `train` entry point needs beyond the dataset.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Output dimension p of the re-learned space.
    pub projection_dim: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Epochs of non-decreasing validation loss before the LR is halved.
    pub lr_halve_patience: usize,
    /// Epochs of non-improving validation Sum before training stops.
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Optional extra validation reports every this many iterations; the
    /// schedule itself always works at epoch granularity.
    pub val_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            projection_dim: 512,
            batch_size: 32,
            initial_lr: 0.001,
            lr_halve_patience: 3,
            early_stop_patience: 10,
            max_epochs: 50,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            seed: 7,
            val_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.projection_dim < 1 {
            return Err(Error::data("projection dimension must be ≥ 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::data("batch size must be ≥ 1"));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::data(format!("learning rate {} must be > 0", self.initial_lr)));
        }
        if self.lr_halve_patience < 1 || self.early_stop_patience < 1 {
            return Err(Error::data("patience values must be ≥ 1"));
        }
        if self.val_every == Some(0) {
            return Err(Error::data("val-every must be ≥ 1 when given"));
        }
        self.loss.validate()?;
        self.augment.validate()
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment accumulators, shaped like the model.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m_w: Array2<f64>,
    pub v_w: Array2<f64>,
    pub m_b: Array1<f64>,
    pub v_b: Array1<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(p: usize, d: usize) -> AdamState {
        AdamState {
            m_w: Array2::zeros((p, d)),
            v_w: Array2::zeros((p, d)),
            m_b: Array1::zeros(p),
            v_b: Array1::zeros(p),
            step: 0,
        }
    }
}

fn adam_update<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr_t: f64,
) {
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, g, m, v| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr_t * *m / (v.sqrt() + ADAM_EPS);
        });
}

/// One bias-corrected Adam update. Folding the correction into the step
/// size, the update is Δθ = −lr·(√(1−β₂ᵗ)/(1−β₁ᵗ))·m/(√v + ε).
pub fn adam_step(
    model: &mut ProjectionModel,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.dw.dim() != model.w.dim() || grads.db.dim() != model.b.dim() {
        return Err(Error::data("gradient shapes do not match the model"));
    }
    if !grads.is_finite() {
        return Err(Error::data("non-finite gradient; aborting the epoch"));
    }
    state.step += 1;
    let t = state.step as i32;
    let lr_t = lr * (1.0 - ADAM_BETA2.powi(t)).sqrt() / (1.0 - ADAM_BETA1.powi(t));
    adam_update(&mut model.w, &grads.dw, &mut state.m_w, &mut state.v_w, lr_t);
    adam_update(&mut model.b, &grads.db, &mut state.m_b, &mut state.v_b, lr_t);
    Ok(())
}

/// The `instance`-th augmented vector of `video` in the current epoch's
/// pool.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct InstanceRef {
    pub video: VideoId,
    pub instance: usize,
}

/// A triplet as pool references — cheap to shuffle and rewrite before the
/// feature vectors are materialized for the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletRef {
    pub anchor: InstanceRef,
    pub positive: InstanceRef,
    pub negative: InstanceRef,
}

/// Per-epoch training instances: video id → its augmented vectors.
pub type InstancePool = BTreeMap<VideoId, Vec<FeatureVector>>;

fn resolve<'a>(pool: &'a InstancePool, r: &InstanceRef) -> Result<&'a FeatureVector> {
    pool.get(&r.video)
        .and_then(|v| v.get(r.instance))
        .ok_or_else(|| Error::data(format!("unknown instance {}#{}", r.video, r.instance)))
}

/// Clones the referenced vectors into a dense batch for the loss.
pub fn materialize(batch: &[TripletRef], pool: &InstancePool) -> Result<TripletBatch> {
    let mut triples = Vec::with_capacity(batch.len());
    for t in batch {
        triples.push((
            resolve(pool, &t.anchor)?.clone(),
            resolve(pool, &t.positive)?.clone(),
            resolve(pool, &t.negative)?.clone(),
        ));
    }
    Ok(TripletBatch { triples })
}

/// Builds one epoch's triplets: one per (anchor instance, relevant train
/// video) pair, negatives drawn uniformly from the train videos outside
/// {v} ∪ R_v, the whole set shuffled and cut into batches (the last may be
/// short). An empty result means no train video has a relevant train video.
pub fn sample_triplets(
    table: &RelevanceTable,
    pool: &InstancePool,
    batch_size: usize,
    rng: &mut StdRng,
) -> Result<Vec<Vec<TripletRef>>> {
    if batch_size < 1 {
        return Err(Error::data("batch size must be ≥ 1"));
    }
    let train: Vec<&VideoId> = pool.keys().collect();
    let train_set: BTreeSet<&VideoId> = train.iter().copied().collect();

    let mut triplets = Vec::new();
    for v in &train {
        let relevant: BTreeSet<&VideoId> = table.relevant(v).iter().collect();
        let positives: Vec<&VideoId> = table
            .relevant(v)
            .iter()
            .filter(|r| train_set.contains(r))
            .collect();
        if positives.is_empty() {
            continue;
        }
        let excluded = 1 + relevant.iter().filter(|r| train_set.contains(*r)).count();
        if excluded >= train.len() {
            return Err(Error::data(format!(
                "cannot sample a negative for {v}: every train video is {v} itself or relevant to it"
            )));
        }
        let n_instances = pool[*v].len();
        for instance in 0..n_instances {
            for pos in &positives {
                let positive = InstanceRef {
                    video: (*pos).clone(),
                    instance: rng.gen_range(0..pool[*pos].len()),
                };
                let neg_video = loop {
                    let cand = train[rng.gen_range(0..train.len())];
                    if cand != *v && !relevant.contains(cand) {
                        break cand;
                    }
                };
                let negative = InstanceRef {
                    video: neg_video.clone(),
                    instance: rng.gen_range(0..pool[neg_video].len()),
                };
                triplets.push(TripletRef {
                    anchor: InstanceRef { video: (*v).clone(), instance },
                    positive,
                    negative,
                });
            }
        }
    }
    triplets.shuffle(rng);
    Ok(triplets.chunks(batch_size).map(<[TripletRef]>::to_vec).collect())
}

/// In-batch hard-negative mining: each triplet's negative is replaced by
/// the most φ-similar positive/negative instance of the *other* triplets,
/// skipping the anchor's own video and its relevant set. Enumeration runs
/// over ascending batch index, positive before negative, and only a
/// strictly higher similarity displaces the incumbent, so ties go to the
/// lowest index. A batch of one (or an anchor with no eligible candidate)
/// keeps its original negative.
pub fn hard_negative_select(
    batch: &[TripletRef],
    pool: &InstancePool,
    model: &ProjectionModel,
    table: &RelevanceTable,
) -> Result<Vec<TripletRef>> {
    if batch.len() < 2 {
        return Ok(batch.to_vec());
    }
    let mut projections: BTreeMap<&InstanceRef, FeatureVector> = BTreeMap::new();
    for t in batch {
        for r in [&t.anchor, &t.positive, &t.negative] {
            if !projections.contains_key(r) {
                projections.insert(r, model.project(resolve(pool, r)?)?);
            }
        }
    }

    let mut out = Vec::with_capacity(batch.len());
    for (i, t) in batch.iter().enumerate() {
        let anchor_phi = &projections[&t.anchor];
        let forbidden: BTreeSet<&VideoId> = std::iter::once(&t.anchor.video)
            .chain(table.relevant(&t.anchor.video))
            .collect();
        let mut best: Option<(f64, &InstanceRef)> = None;
        for (j, other) in batch.iter().enumerate() {
            if j == i {
                continue;
            }
            for cand in [&other.positive, &other.negative] {
                if forbidden.contains(&cand.video) {
                    continue;
                }
                let cs = cosine_similarity(anchor_phi, &projections[cand])?;
                if best.is_none_or(|(b, _)| cs > b) {
                    best = Some((cs, cand));
                }
            }
        }
        out.push(TripletRef {
            anchor: t.anchor.clone(),
            positive: t.positive.clone(),
            negative: best.map_or_else(|| t.negative.clone(), |(_, c)| c.clone()),
        });
    }
    Ok(out)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Summed triplet loss over the epoch's batches.
    pub train_loss: f64,
    /// Loss of the fixed validation triplet set under the current model.
    pub val_loss: f64,
    /// Strategy-1 Sum metric on the validation split.
    pub val_sum: f64,
    /// Learning rate the epoch ran with.
    pub lr: f64,
    /// Cumulative optimizer iterations.
    pub iterations: usize,
    /// True only for the optional `val_every` mid-epoch reports, which are
    /// emitted to the callback but never stored in the history.
    pub mid_epoch: bool,
}

impl EpochRecord {
    /// The tab-separated log line: epoch, train loss, val loss, val Sum,
    /// lr, iterations.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:e}\t{}",
            self.epoch, self.train_loss, self.val_loss, self.val_sum, self.lr, self.iterations
        )
    }
}

/// Per-epoch records of a completed (or stopped) run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// Fixed validation triplets: anchors are val videos, positives their
/// relevant videos among train ∪ val, negatives uniform over the rest of
/// that pool. Built once so the validation loss is comparable across
/// epochs. May be empty when no val video has reachable ground truth; the
/// validation loss is then constantly zero and the LR schedule idles on it.
fn validation_triplets(ds: &Dataset, rng: &mut StdRng) -> Result<TripletBatch> {
    let pool: Vec<&VideoId> = ds
        .table
        .split
        .iter()
        .filter(|(_, s)| matches!(s, Split::Train | Split::Val))
        .map(|(id, _)| id)
        .collect();
    let pool_set: BTreeSet<&VideoId> = pool.iter().copied().collect();
    let mut triples = Vec::new();
    for v in ds.table.ids_in(Split::Val) {
        let relevant: BTreeSet<&VideoId> = ds.table.relevant(&v).iter().collect();
        let positives: Vec<&VideoId> = ds
            .table
            .relevant(&v)
            .iter()
            .filter(|r| pool_set.contains(r))
            .collect();
        if positives.is_empty() {
            continue;
        }
        let excluded = 1 + relevant.iter().filter(|r| pool_set.contains(*r)).count();
        if excluded >= pool.len() {
            continue;
        }
        let anchor = ds.videos.require(&v)?;
        for pos in positives {
            let neg = loop {
                let cand = pool[rng.gen_range(0..pool.len())];
                if *cand != v && !relevant.contains(cand) {
                    break cand;
                }
            };
            triples.push((
                anchor.clone(),
                ds.videos.require(pos)?.clone(),
                ds.videos.require(neg)?.clone(),
            ));
        }
    }
    Ok(TripletBatch { triples })
}

/// Builds one video's augmented instances for the current epoch.
fn video_instances(
    v: &VideoId,
    ds: &Dataset,
    stats: &crate::augment::NoiseStats,
    aug: &AugmentConfig,
    rng: &mut StdRng,
) -> Result<Vec<FeatureVector>> {
    if aug.enable_frame_level {
        if let Some(seq) = ds.frames.as_ref().and_then(|ff| ff.by_id.get(v)) {
            return augment_multilevel(seq, stats, aug, rng);
        }
    }
    // No frame data for this video: fall back to its pooled feature.
    let solo = [ds.videos.require(v)?.clone()];
    let video_only = AugmentConfig { enable_frame_level: false, ..*aug };
    augment_multilevel(&solo, stats, &video_only, rng)
}

/// Runs the full optimization loop and returns the best-validation model
/// snapshot together with the per-epoch history. The callback sees every
/// record as it is produced (the CLI turns them into log lines), so any
/// partial history survives an abort.
pub fn train(
    cfg: &TrainConfig,
    ds: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ProjectionModel, TrainHistory)> {
    cfg.validate()?;
    let d = ds.videos.dim;
    let train_ids = ds.table.ids_in(Split::Train);
    if train_ids.is_empty() {
        return Err(Error::data("train split is empty"));
    }

    let mut rng_init = StdRng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_0001));
    let mut rng_val = StdRng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_0002));

    let mut model = ProjectionModel::init(d, cfg.projection_dim, &mut rng_init);
    let mut history = TrainHistory::default();
    if cfg.max_epochs == 0 {
        return Ok((model, history));
    }

    let mut aug = cfg.augment;
    if ds.frames.is_none() {
        aug.enable_frame_level = false;
    }
    // Noise statistics come from the training split only.
    let train_feats: Vec<&FeatureVector> = train_ids
        .iter()
        .map(|v| ds.videos.require(v))
        .collect::<Result<_>>()?;
    let stats = estimate_noise_stats(train_feats.iter().copied())?;
    let val_triplets = validation_triplets(ds, &mut rng_val)?;

    let mut adam = AdamState::new(cfg.projection_dim, d);
    let mut lr = cfg.initial_lr;
    let mut best_model = model.clone();
    let mut best_sum = f64::NEG_INFINITY;
    let mut best_val_loss = f64::INFINITY;
    let mut stop_counter = 0;
    let mut lr_counter = 0;
    let mut iterations = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut rng_epoch = StdRng::seed_from_u64(
            cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        // Fresh augmentation draws and fresh triplets every epoch.
        let mut pool = InstancePool::new();
        for v in &train_ids {
            pool.insert(v.clone(), video_instances(v, ds, &stats, &aug, &mut rng_epoch)?);
        }
        let batches = sample_triplets(&ds.table, &pool, cfg.batch_size, &mut rng_epoch)?;
        if batches.is_empty() {
            return Err(Error::data(
                "no training triplets: no train video has a relevant video inside the train split",
            ));
        }

        let mut epoch_loss = 0.0;
        for batch_refs in &batches {
            let refs = if cfg.loss.kind == LossKind::Itrl {
                hard_negative_select(batch_refs, &pool, &model, &ds.table)?
            } else {
                batch_refs.clone()
            };
            let batch = materialize(&refs, &pool)?;
            let (loss, grads) = loss_gradients(&model, &batch, &cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::data(format!("non-finite training loss in epoch {epoch}")));
            }
            adam_step(&mut model, &grads, &mut adam, lr)?;
            epoch_loss += loss;
            iterations += 1;

            if let Some(every) = cfg.val_every {
                if iterations % every == 0 {
                    let record = EpochRecord {
                        epoch,
                        train_loss: epoch_loss,
                        val_loss: batch_loss(&model, &val_triplets, &cfg.loss)?,
                        val_sum: evaluate(&model, ds, Split::Val, StrategySpec::One, false)?.sum,
                        lr,
                        iterations,
                        mid_epoch: true,
                    };
                    on_epoch(&record);
                }
            }
        }

        let val_loss = batch_loss(&model, &val_triplets, &cfg.loss)?;
        let val_sum = evaluate(&model, ds, Split::Val, StrategySpec::One, false)?.sum;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss,
            val_loss,
            val_sum,
            lr,
            iterations,
            mid_epoch: false,
        };
        on_epoch(&record);
        history.epochs.push(record);

        // Early stopping and best-snapshot selection follow validation
        // performance; only a strict improvement resets the counter.
        if val_sum > best_sum {
            best_sum = val_sum;
            best_model = model.clone();
            stop_counter = 0;
        } else {
            stop_counter += 1;
            if stop_counter >= cfg.early_stop_patience {
                break;
            }
        }
        // The LR schedule follows validation loss.
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            lr_counter = 0;
        } else {
            lr_counter += 1;
            if lr_counter >= cfg.lr_halve_patience {
                lr /= 2.0;
                lr_counter = 0;
            }
        }
    }
    Ok((best_model, history))
}
