//! Synthetic clustered datasets with planted relevance structure, plus the
//! independent brute-force oracles used by the test suites and the
//! `gradcheck` subcommand.
//!
//! Videos are grouped into clusters around random centroids living in a
//! low-dimensional signal subspace; a video's ground-truth relevant list is
//! the other members of its cluster, ranked by the cosine similarity of the
//! clean per-video latents. The optional distractor fills the remaining
//! dimensions with a high-variance per-video nuisance component and then
//! applies a fixed random rotation plus per-dimension scaling to every
//! emitted feature. Raw-space cosine is thus dominated by nuisance energy —
//! a weak (but not useless) relevance signal — while an affine re-learner
//! can recover the signal subspace and undo the mixing.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::datamodel::{
    self, mean_pool, Dataset, FeatureVector, FrameFeatures, RelevanceTable, Split, VideoFeatures,
    VideoId,
};
use crate::error::{Error, Result};
use crate::model::{
    batch_loss, cosine_similarity, loss_gradients, Gradients, LossConfig, LossKind,
    ProjectionModel, TripletBatch,
};
use crate::predict::RankedList;

/// Canonical file names written by [`write_to_dir`].
pub const VIDEO_FEATURES_FILE: &str = "features.tsv";
pub const FRAME_FEATURES_FILE: &str = "frames.tsv";
pub const RELEVANCE_FILE: &str = "relevance.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";

/// Generator parameters. Defaults give a desk-scale dataset that trains in
/// seconds: 240 videos in 24 clusters of 10, d = 64, 20–40 frames each,
/// 0.6/0.2/0.2 splits, distractor transform on.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub num_clusters: usize,
    pub dim: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Standard deviation of the Gaussian noise placed around each cluster
    /// centroid, used both for per-video latents and per-frame jitter.
    pub noise_scale: f64,
    /// Apply the distractor: per-video nuisance dimensions plus a rotation
    /// and anisotropic scaling of the emitted features.
    pub distractor: bool,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_videos: 240,
            num_clusters: 24,
            dim: 64,
            min_frames: 20,
            max_frames: 40,
            noise_scale: 0.4,
            distractor: true,
            train_frac: 0.6,
            val_frac: 0.2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters < 2 {
            return Err(Error::data("need at least 2 clusters"));
        }
        if self.num_videos < 2 * self.num_clusters {
            return Err(Error::data(format!(
                "{} videos cannot give every one of {} clusters ≥ 2 members",
                self.num_videos, self.num_clusters
            )));
        }
        if self.dim < 1 {
            return Err(Error::data("dimension must be ≥ 1"));
        }
        if self.min_frames < 1 || self.min_frames > self.max_frames {
            return Err(Error::data(format!(
                "bad frame range {}..{}",
                self.min_frames, self.max_frames
            )));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::data("noise scale must be ≥ 0"));
        }
        if self.train_frac <= 0.0 || self.val_frac <= 0.0 || self.train_frac + self.val_frac >= 1.0
        {
            return Err(Error::data(format!(
                "split fractions train={} val={} must be positive and sum below 1",
                self.train_frac, self.val_frac
            )));
        }
        Ok(())
    }
}

/// Distractor anisotropy: per-dimension scales are log-uniform in
/// [1/SCALE_SPREAD, SCALE_SPREAD].
const SCALE_SPREAD: f64 = 2.0;

/// Fraction of dimensions carrying cluster signal; the rest hold per-video
/// nuisance when the distractor is on. Sized so the default cluster count
/// fits into the signal subspace with room to spread — a linear map cannot
/// make more mutually near-orthogonal directions than the subspace has.
const SIGNAL_FRACTION: f64 = 0.5;

/// Per-dimension standard deviation of the nuisance component. Sized so
/// nuisance energy dominates signal energy in raw cosine without drowning
/// the training gradient.
const NUISANCE_SCALE: f64 = 3.5;

/// Strength of the signal-space direction shared by every centroid. It
/// keeps unrelated videos at high absolute cosine — the regime where an
/// absolute ceiling on negative similarity earns its keep over a purely
/// relative margin.
const COMMON_STRENGTH: f64 = 4.0;

fn signal_dims(d: usize) -> usize {
    ((d as f64 * SIGNAL_FRACTION).round() as usize).clamp(1, d)
}

fn gaussian_vec(d: usize, rng: &mut StdRng) -> FeatureVector {
    Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal))
}

/// Gaussian draw confined to coordinates `lo..hi`, zero elsewhere. The
/// closure runs for every index in order, so the RNG stream stays
/// deterministic.
fn banded_vec(d: usize, lo: usize, hi: usize, scale: f64, rng: &mut StdRng) -> FeatureVector {
    Array1::from_shape_fn(d, |i| {
        if (lo..hi).contains(&i) {
            scale * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    })
}

/// Random orthogonal matrix via modified Gram-Schmidt on a Gaussian draw.
fn random_rotation(d: usize, rng: &mut StdRng) -> Array2<f64> {
    loop {
        let mut q = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
        let mut ok = true;
        for i in 0..d {
            for j in 0..i {
                let proj = q.row(i).dot(&q.row(j));
                let prev = q.row(j).to_owned();
                q.row_mut(i).scaled_add(-proj, &prev);
            }
            let norm = q.row(i).dot(&q.row(i)).sqrt();
            if norm < 1e-8 {
                ok = false; // essentially never for Gaussian draws
                break;
            }
            q.row_mut(i).mapv_inplace(|x| x / norm);
        }
        if ok {
            return q;
        }
    }
}

/// Builds the dataset in memory. Deterministic: equal configs (including
/// the seed) give equal datasets.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    // Independent streams per stage, so e.g. a different frame-count draw
    // cannot shift the split assignment.
    let mut r_centroid = StdRng::seed_from_u64(cfg.seed.wrapping_add(0x1));
    let mut r_latent = StdRng::seed_from_u64(cfg.seed.wrapping_add(0x2));
    let mut r_frames = StdRng::seed_from_u64(cfg.seed.wrapping_add(0x3));
    let mut r_splits = StdRng::seed_from_u64(cfg.seed.wrapping_add(0x4));
    let mut r_distract = StdRng::seed_from_u64(cfg.seed.wrapping_add(0x5));

    let id_width = (cfg.num_videos - 1).to_string().len();
    let ids: Vec<VideoId> = (0..cfg.num_videos)
        .map(|i| VideoId::new(format!("v{i:0id_width$}")).expect("generated id is valid"))
        .collect();
    // Round-robin cluster assignment keeps sizes within one of each other
    // and guarantees ≥ 2 members per cluster given the validated config.
    let cluster_of = |i: usize| i % cfg.num_clusters;

    // Cluster structure lives in the leading signal coordinates only, and
    // every centroid shares one strong direction on top of its own part.
    let k = signal_dims(cfg.dim);
    let common = loop {
        let u = banded_vec(cfg.dim, 0, k, 1.0, &mut r_centroid);
        let norm = u.dot(&u).sqrt();
        if norm > 1e-6 {
            break u * (COMMON_STRENGTH / norm);
        }
    };
    let centroids: Vec<FeatureVector> = (0..cfg.num_clusters)
        .map(|_| &common + &banded_vec(cfg.dim, 0, k, 1.0, &mut r_centroid))
        .collect();
    let latents: Vec<FeatureVector> = (0..cfg.num_videos)
        .map(|i| {
            &centroids[cluster_of(i)] + &banded_vec(cfg.dim, 0, k, cfg.noise_scale, &mut r_latent)
        })
        .collect();

    let distractor = if cfg.distractor {
        let rotation = random_rotation(cfg.dim, &mut r_distract);
        let scales = Array1::from_shape_fn(cfg.dim, |_| {
            let log_spread = SCALE_SPREAD.ln();
            r_distract.gen_range(-log_spread..log_spread).exp()
        });
        Some((rotation, scales))
    } else {
        None
    };
    let transform = |v: &FeatureVector| -> FeatureVector {
        match &distractor {
            Some((q, sc)) => q.dot(v) * sc,
            None => v.clone(),
        }
    };

    let mut frames_by_id = BTreeMap::new();
    let mut videos_by_id = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        // The nuisance component is fixed per video, so frame pooling does
        // not average it away and raw video-level cosine stays dominated
        // by it.
        let base = if cfg.distractor {
            &latents[i] + &banded_vec(cfg.dim, k, cfg.dim, NUISANCE_SCALE, &mut r_frames)
        } else {
            latents[i].clone()
        };
        let n = r_frames.gen_range(cfg.min_frames..=cfg.max_frames);
        let frames: Vec<FeatureVector> = (0..n)
            .map(|_| transform(&(&base + &(gaussian_vec(cfg.dim, &mut r_frames) * cfg.noise_scale))))
            .collect();
        videos_by_id.insert(id.clone(), mean_pool(&frames)?);
        frames_by_id.insert(id.clone(), frames);
    }

    // R_v: same-cluster videos ranked by the cosine of the clean latents.
    let mut lists = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let mut peers: Vec<(usize, f64)> = (0..cfg.num_videos)
            .filter(|j| *j != i && cluster_of(*j) == cluster_of(i))
            .map(|j| (j, raw_cosine(&latents[i], &latents[j])))
            .collect();
        peers.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("latent cosines are finite")
                .then_with(|| ids[a.0].cmp(&ids[b.0]))
        });
        lists.insert(
            id.clone(),
            peers.into_iter().map(|(j, _)| ids[j].clone()).collect::<Vec<_>>(),
        );
    }

    // Stratified splits: shuffle each cluster, then cut by the fractions.
    let mut split = BTreeMap::new();
    for k in 0..cfg.num_clusters {
        let mut members: Vec<usize> = (0..cfg.num_videos).filter(|i| cluster_of(*i) == k).collect();
        members.shuffle(&mut r_splits);
        let size = members.len();
        let n_train = ((size as f64 * cfg.train_frac).round() as usize).min(size);
        let n_val = ((size as f64 * cfg.val_frac).round() as usize).min(size - n_train);
        for (pos, i) in members.into_iter().enumerate() {
            let s = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            split.insert(ids[i].clone(), s);
        }
    }

    Dataset::new(
        VideoFeatures { dim: cfg.dim, by_id: videos_by_id },
        Some(FrameFeatures { dim: cfg.dim, by_id: frames_by_id }),
        RelevanceTable { lists, split },
    )
}

/// Writes the dataset's four files into `dir` using the canonical names.
pub fn write_to_dir(ds: &Dataset, dir: &Path) -> Result<()> {
    let frames = ds
        .frames
        .as_ref()
        .ok_or_else(|| Error::data("dataset has no frame features to write"))?;
    datamodel::write_video_features(
        &dir.join(VIDEO_FEATURES_FILE),
        ds.videos.dim,
        ds.videos.by_id.iter(),
    )?;
    datamodel::write_frame_features(&dir.join(FRAME_FEATURES_FILE), frames.dim, frames.by_id.iter())?;
    datamodel::write_relevance(&dir.join(RELEVANCE_FILE), ds.table.lists.iter())?;
    datamodel::write_splits(
        &dir.join(SPLITS_FILE),
        ds.table.split.iter().map(|(id, s)| (id, *s)),
    )?;
    Ok(())
}

fn raw_cosine(u: &FeatureVector, w: &FeatureVector) -> f64 {
    // Deliberately hand-rolled: this file's rankings serve as an oracle for
    // the main implementation, so it shares no similarity code with it.
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nw = 0.0;
    for (a, b) in u.iter().zip(w.iter()) {
        dot += a * b;
        nu += a * a;
        nw += b * b;
    }
    dot / (nu.sqrt() * nw.sqrt())
}

/// Exhaustive cosine ranking in the raw (un-projected) feature space — the
/// no-re-learning baseline. The seed never ranks itself.
pub fn oracle_rank_raw(
    features: &VideoFeatures,
    seed: &VideoId,
    candidates: &[VideoId],
) -> Result<RankedList> {
    let seed_vec = features.require(seed)?;
    let mut entries = Vec::with_capacity(candidates.len());
    for c in candidates {
        if c == seed {
            continue;
        }
        let score = raw_cosine(seed_vec, features.require(c)?);
        if !score.is_finite() {
            return Err(Error::data(format!(
                "cosine of {seed} and {c} is undefined (zero-norm feature?)"
            )));
        }
        entries.push((c.clone(), score));
    }
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores checked finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(RankedList { seed: seed.clone(), entries })
}

/// Central-difference gradients of the batch loss, (L(θ+h) − L(θ−h)) / 2h
/// per parameter. Slow by design; this is the oracle for
/// `model::loss_gradients`.
pub fn finite_diff_gradients(
    model: &ProjectionModel,
    batch: &TripletBatch,
    cfg: &LossConfig,
    h: f64,
) -> Result<Gradients> {
    let mut m = model.clone();
    let mut grads = Gradients::zeros(model.p(), model.d());
    for i in 0..model.p() {
        for j in 0..model.d() {
            let orig = m.w[[i, j]];
            m.w[[i, j]] = orig + h;
            let plus = batch_loss(&m, batch, cfg)?;
            m.w[[i, j]] = orig - h;
            let minus = batch_loss(&m, batch, cfg)?;
            m.w[[i, j]] = orig;
            grads.dw[[i, j]] = (plus - minus) / (2.0 * h);
        }
    }
    for i in 0..model.p() {
        let orig = m.b[i];
        m.b[i] = orig + h;
        let plus = batch_loss(&m, batch, cfg)?;
        m.b[i] = orig - h;
        let minus = batch_loss(&m, batch, cfg)?;
        m.b[i] = orig;
        grads.db[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grads)
}

/// Worst-case relative disagreement between two gradient sets:
/// ‖a − f‖_∞ / max(‖a‖_∞, ‖f‖_∞, 1e-12).
pub fn relative_gradient_error(a: &Gradients, f: &Gradients) -> f64 {
    let inf_norm = |g: &Gradients| -> f64 {
        g.dw.iter()
            .chain(g.db.iter())
            .fold(0.0f64, |acc, x| acc.max(x.abs()))
    };
    let max_diff = a
        .dw
        .iter()
        .zip(f.dw.iter())
        .chain(a.db.iter().zip(f.db.iter()))
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    max_diff / inf_norm(a).max(inf_norm(f)).max(1e-12)
}

/// Runs `draws` randomized gradient checks — random loss kind, margins,
/// shapes, model, and triplets — and returns the worst relative error
/// between analytic and central-difference gradients (h = 1e-5).
///
/// Hinge losses are non-differentiable at their kinks, where the two
/// gradient definitions legitimately disagree, so draws are rejected until
/// every hinge argument is at least 1e-3 away from zero.
pub fn gradient_check(draws: usize, seed: u64) -> Result<f64> {
    if draws == 0 {
        return Err(Error::data("gradient check needs at least one draw"));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let kind = *[LossKind::Trl, LossKind::Netrl, LossKind::Contrastive]
            .choose(&mut rng)
            .expect("non-empty");
        let cfg = LossConfig {
            kind,
            m1: rng.gen_range(0.05..0.4),
            m2: rng.gen_range(0.01..0.15),
            alpha: rng.gen_range(0.25..2.0),
        };
        let d = rng.gen_range(3..=8);
        let p = rng.gen_range(2..=6);
        let model = ProjectionModel::init(d, p, &mut rng);
        let n_triples = rng.gen_range(1..=4);
        let mut batch = TripletBatch { triples: Vec::with_capacity(n_triples) };
        for _ in 0..n_triples {
            // Resample any triplet whose hinge arguments sit near a kink.
            let triple = loop {
                let v = |r: &mut StdRng| {
                    Array1::from_shape_fn(d, |_| r.gen_range(-1.0..1.0))
                };
                let t = (v(&mut rng), v(&mut rng), v(&mut rng));
                let cs_pos = cosine_similarity(&model.project(&t.0)?, &model.project(&t.1)?)?;
                let cs_neg = cosine_similarity(&model.project(&t.0)?, &model.project(&t.2)?)?;
                let args = match kind {
                    LossKind::Contrastive => vec![cs_neg - cfg.m1],
                    LossKind::Netrl => {
                        vec![cfg.m1 - cs_pos + cs_neg, cs_neg - cfg.m2]
                    }
                    LossKind::Trl | LossKind::Itrl => vec![cfg.m1 - cs_pos + cs_neg],
                };
                if args.iter().all(|a| a.abs() > 1e-3) {
                    break t;
                }
            };
            batch.triples.push(triple);
        }
        let (_, analytic) = loss_gradients(&model, &batch, &cfg)?;
        let fd = finite_diff_gradients(&model, &batch, &cfg, 1e-5)?;
        worst = worst.max(relative_gradient_error(&analytic, &fd));
    }
    Ok(worst)
}
