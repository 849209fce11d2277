//! The re-learned feature space and its training losses.
//!
//! A model is a single affine map φ(v) = Wv + b taking d-dimensional input
//! features to a p-dimensional task-specific space. Similarity in both the
//! raw and re-learned space is cosine,
//!
//! ```text
//! cs(v, v') = v·v' / (‖v‖·‖v'‖)
//! ```
//!
//! and training pushes relevant pairs together and irrelevant pairs apart
//! through triplet hinge losses:
//!
//! * `trl`  — max(0, m1 − cs_pos + cs_neg), the classic ranking hinge;
//! * `itrl` — same formula, combined with in-batch hard-negative selection
//!   (module `train`);
//! * `netrl` — trl + α·max(0, cs_neg − m2), which additionally caps the
//!   absolute similarity of irrelevant pairs at m2;
//! * `contrastive` — (1 − cs_pos) + max(0, cs_neg − m1), a similarity-space
//!   baseline that constrains pairs independently.
//!
//! Gradients are analytic (the cosine chain rule below), exact for the
//! hinge subgradient convention "active iff argument strictly positive".

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::datamodel::FeatureVector;
use crate::error::{Error, Result};

/// Affine projection parameters: W is p×d, b has length p.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionModel {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl ProjectionModel {
    /// Input dimension d.
    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    /// Output dimension p.
    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    /// Fresh parameters: W i.i.d. uniform in ±1/√d, b a small non-zero
    /// constant so that φ of a zero vector still has non-zero norm.
    pub fn init(d: usize, p: usize, rng: &mut impl Rng) -> ProjectionModel {
        let bound = 1.0 / (d as f64).sqrt();
        let w = Array2::from_shape_fn((p, d), |_| rng.gen_range(-bound..bound));
        let b = Array1::from_elem(p, 1e-3);
        ProjectionModel { w, b }
    }

    /// φ(v) = Wv + b.
    pub fn project(&self, v: &FeatureVector) -> Result<FeatureVector> {
        if v.len() != self.d() {
            return Err(Error::data(format!(
                "projection expects dimension {}, got {}",
                self.d(),
                v.len()
            )));
        }
        Ok(self.w.dot(v) + &self.b)
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|x| x.is_finite()) && self.b.iter().all(|x| x.is_finite())
    }
}

/// (anchor, positive, negative) feature triples consumed by the loss.
#[derive(Clone, Debug, Default)]
pub struct TripletBatch {
    pub triples: Vec<(FeatureVector, FeatureVector, FeatureVector)>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

fn norm(v: &FeatureVector) -> f64 {
    v.dot(v).sqrt()
}

/// cs(u, w) = u·w / (‖u‖‖w‖). Undefined (an error) for zero-norm inputs.
pub fn cosine_similarity(u: &FeatureVector, w: &FeatureVector) -> Result<f64> {
    if u.len() != w.len() {
        return Err(Error::data(format!(
            "cosine similarity dimension mismatch: {} vs {}",
            u.len(),
            w.len()
        )));
    }
    let (nu, nw) = (norm(u), norm(w));
    if nu == 0.0 || nw == 0.0 {
        return Err(Error::data("cosine similarity undefined for a zero-norm vector"));
    }
    Ok(u.dot(w) / (nu * nw))
}

/// Which training loss to optimize.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Trl,
    Itrl,
    Netrl,
    Contrastive,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Trl => "trl",
            LossKind::Itrl => "itrl",
            LossKind::Netrl => "netrl",
            LossKind::Contrastive => "contrastive",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<LossKind> {
        match s {
            "trl" => Ok(LossKind::Trl),
            "itrl" => Ok(LossKind::Itrl),
            "netrl" => Ok(LossKind::Netrl),
            "contrastive" => Ok(LossKind::Contrastive),
            _ => Err(Error::data(format!(
                "unknown loss {s:?} (expected trl|itrl|netrl|contrastive)"
            ))),
        }
    }
}

/// Loss hyperparameters: ranking margin m1, negative-similarity cap m2,
/// and the weight α of the negative-enhancement term.
#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub kind: LossKind,
    pub m1: f64,
    pub m2: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Netrl,
            m1: 0.2,
            m2: 0.05,
            alpha: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m2 >= 1.0 {
            return Err(Error::data(format!(
                "m2 = {} must be smaller than 1, the maximum cosine similarity",
                self.m2
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::data(format!("alpha = {} must be non-negative", self.alpha)));
        }
        Ok(())
    }
}

fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// Per-triplet loss from the two similarities in the re-learned space.
pub fn loss_value(cs_pos: f64, cs_neg: f64, cfg: &LossConfig) -> f64 {
    match cfg.kind {
        LossKind::Trl | LossKind::Itrl => hinge(cfg.m1 - cs_pos + cs_neg),
        LossKind::Netrl => {
            hinge(cfg.m1 - cs_pos + cs_neg) + cfg.alpha * hinge(cs_neg - cfg.m2)
        }
        LossKind::Contrastive => (1.0 - cs_pos) + hinge(cs_neg - cfg.m1),
    }
}

/// ∂loss/∂cs_pos and ∂loss/∂cs_neg, with the hinge subgradient taken as 0
/// at the kink (a hinge contributes iff its argument is strictly positive).
fn loss_coefficients(cs_pos: f64, cs_neg: f64, cfg: &LossConfig) -> (f64, f64) {
    let ranking_active = cfg.m1 - cs_pos + cs_neg > 0.0;
    match cfg.kind {
        LossKind::Trl | LossKind::Itrl => {
            if ranking_active {
                (-1.0, 1.0)
            } else {
                (0.0, 0.0)
            }
        }
        LossKind::Netrl => {
            let (mut c_pos, mut c_neg) = (0.0, 0.0);
            if ranking_active {
                c_pos = -1.0;
                c_neg = 1.0;
            }
            if cs_neg - cfg.m2 > 0.0 {
                c_neg += cfg.alpha;
            }
            (c_pos, c_neg)
        }
        LossKind::Contrastive => {
            let c_neg = if cs_neg - cfg.m1 > 0.0 { 1.0 } else { 0.0 };
            (-1.0, c_neg)
        }
    }
}

/// Parameter gradients shaped like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

impl Gradients {
    pub fn zeros(p: usize, d: usize) -> Gradients {
        Gradients {
            dw: Array2::zeros((p, d)),
            db: Array1::zeros(p),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dw.iter().all(|x| x.is_finite()) && self.db.iter().all(|x| x.is_finite())
    }
}

/// ∂cs(u, w)/∂u = w/(‖u‖‖w‖) − cs·u/‖u‖².
fn cosine_grad_wrt_first(u: &FeatureVector, w: &FeatureVector, cs: f64) -> FeatureVector {
    let (nu, nw) = (norm(u), norm(w));
    w / (nu * nw) - &(u * (cs / (nu * nu)))
}

/// Sum of per-triplet losses over the batch and its exact analytic
/// gradient. Accumulation is strictly sequential in batch order so results
/// are bit-reproducible.
pub fn loss_gradients(
    model: &ProjectionModel,
    batch: &TripletBatch,
    cfg: &LossConfig,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::data("loss_gradients: empty batch"));
    }
    let mut total = 0.0;
    let mut grads = Gradients::zeros(model.p(), model.d());
    // Each triplet's gradient is materialized in `scratch` and folded into
    // the totals with a single elementwise add per tensor, so equal
    // triplets contribute bitwise-equal addends (repeating a triplet
    // doubles the gradient exactly).
    let mut scratch = Gradients::zeros(model.p(), model.d());
    // dW += g ⊗ x (outer product), db += g, for one projected stream with
    // input x and upstream gradient g.
    let backprop = |g: &FeatureVector, x: &FeatureVector, grads: &mut Gradients| {
        for (i, gi) in g.iter().enumerate() {
            if *gi != 0.0 {
                grads.dw.row_mut(i).scaled_add(*gi, x);
            }
        }
        grads.db += g;
    };
    for (idx, (anchor, pos, neg)) in batch.triples.iter().enumerate() {
        let pa = model.project(anchor)?;
        let pp = model.project(pos)?;
        let pn = model.project(neg)?;
        for (name, v) in [("anchor", &pa), ("positive", &pp), ("negative", &pn)] {
            if norm(v) == 0.0 {
                return Err(Error::data(format!(
                    "triplet {idx}: projected {name} has zero norm"
                )));
            }
        }
        let cs_pos = cosine_similarity(&pa, &pp)?;
        let cs_neg = cosine_similarity(&pa, &pn)?;
        total += loss_value(cs_pos, cs_neg, cfg);

        let (c_pos, c_neg) = loss_coefficients(cs_pos, cs_neg, cfg);
        if c_pos == 0.0 && c_neg == 0.0 {
            continue;
        }
        scratch.dw.fill(0.0);
        scratch.db.fill(0.0);
        // Upstream gradients w.r.t. the three projections.
        let mut d_pa = Array1::<f64>::zeros(model.p());
        if c_pos != 0.0 {
            d_pa += &(cosine_grad_wrt_first(&pa, &pp, cs_pos) * c_pos);
            let d_pp = cosine_grad_wrt_first(&pp, &pa, cs_pos) * c_pos;
            backprop(&d_pp, pos, &mut scratch);
        }
        if c_neg != 0.0 {
            d_pa += &(cosine_grad_wrt_first(&pa, &pn, cs_neg) * c_neg);
            let d_pn = cosine_grad_wrt_first(&pn, &pa, cs_neg) * c_neg;
            backprop(&d_pn, neg, &mut scratch);
        }
        backprop(&d_pa, anchor, &mut scratch);
        grads.dw += &scratch.dw;
        grads.db += &scratch.db;
    }
    Ok((total, grads))
}

/// Batch loss only — used for validation, where gradients are not needed.
pub fn batch_loss(model: &ProjectionModel, batch: &TripletBatch, cfg: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for (anchor, pos, neg) in &batch.triples {
        let pa = model.project(anchor)?;
        let pp = model.project(pos)?;
        let pn = model.project(neg)?;
        total += loss_value(cosine_similarity(&pa, &pp)?, cosine_similarity(&pa, &pn)?, cfg);
    }
    Ok(total)
}
