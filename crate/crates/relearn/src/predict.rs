//! Relevance scoring and top-k ranking in the re-learned space.
//!
//! Candidate projections are computed once and unit-normalized, so every
//! seed-to-candidate relevance is a plain dot product (O(p) per pair,
//! O(|V|·p) per seed). Two strategies:
//!
//! * strategy 1 — r(v_s, v_c) = cs_φ(v_s, v_c);
//! * strategy 2 — adds the seed's similarity to the candidate's known top-n
//!   relevant videos: r(v_s, v_c) = cs_φ(v_s, v_c) + Σᵢ cs_φ(v_s, v_{c,r}^i).
//!
//! Rankings are deterministic: descending score, ties broken by id.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use crate::datamodel::{FeatureVector, VideoFeatures, VideoId};
use crate::error::{Error, Result};
use crate::model::ProjectionModel;

/// Precomputed, unit-normalized projections φ(v)/‖φ(v)‖ of a candidate set.
#[derive(Clone, Debug)]
pub struct CandidateIndex {
    ids: Vec<VideoId>,
    /// |ids| × p; row i is the normalized projection of ids[i].
    projected: Array2<f64>,
    row_of: BTreeMap<VideoId, usize>,
}

impl CandidateIndex {
    pub fn ids(&self) -> &[VideoId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &VideoId) -> bool {
        self.row_of.contains_key(id)
    }

    /// The normalized projection of a candidate.
    pub fn projection(&self, id: &VideoId) -> Option<FeatureVector> {
        self.row_of.get(id).map(|r| self.projected.row(*r).to_owned())
    }

    /// cs_φ of `phi` (assumed unit-norm) against every candidate, in row
    /// order — one matrix-vector product.
    pub fn scores(&self, phi: &FeatureVector) -> Array1<f64> {
        self.projected.dot(phi)
    }
}

/// Known relevant videos per candidate, ranked; feeds strategy 2.
pub type NeighborTable = BTreeMap<VideoId, Vec<VideoId>>;

/// Scoring rule for [`rank_candidates`].
#[derive(Clone, Debug)]
pub enum Strategy {
    One,
    Two { neighbors: NeighborTable, n: usize },
}

/// Projects and normalizes every id in `ids` (duplicates collapse; the
/// index is ordered by id). A zero-norm projection is an error naming the
/// offending video.
pub fn build_candidate_index(
    model: &ProjectionModel,
    features: &VideoFeatures,
    ids: &[VideoId],
) -> Result<CandidateIndex> {
    let unique: std::collections::BTreeSet<&VideoId> = ids.iter().collect();
    if unique.is_empty() {
        return Err(Error::data("candidate set is empty"));
    }
    let mut ordered = Vec::with_capacity(unique.len());
    let mut projected = Array2::zeros((unique.len(), model.p()));
    let mut row_of = BTreeMap::new();
    for (row, id) in unique.into_iter().enumerate() {
        let phi = model.project(features.require(id)?)?;
        let norm = phi.dot(&phi).sqrt();
        if norm == 0.0 {
            return Err(Error::data(format!("projection of {id} has zero norm")));
        }
        if !norm.is_finite() {
            return Err(Error::data(format!("projection of {id} is not finite")));
        }
        projected.row_mut(row).assign(&(phi / norm));
        row_of.insert(id.clone(), row);
        ordered.push(id.clone());
    }
    Ok(CandidateIndex { ids: ordered, projected, row_of })
}

/// Strategy-1 relevance: the dot product of the seed's normalized
/// projection with the candidate's index row.
pub fn relevance_strategy1(
    index: &CandidateIndex,
    seed_phi_normalized: &FeatureVector,
    candidate: &VideoId,
) -> Result<f64> {
    let row = index
        .row_of
        .get(candidate)
        .ok_or_else(|| Error::data(format!("candidate {candidate} is not in the index")))?;
    Ok(index.projected.row(*row).dot(seed_phi_normalized))
}

/// Strategy-2 relevance: strategy 1 plus the seed's similarity to the
/// candidate's top-n known relevant videos. A candidate without a neighbor
/// entry contributes an empty sum; n larger than the available list
/// truncates to what exists.
pub fn relevance_strategy2(
    index: &CandidateIndex,
    seed_phi_normalized: &FeatureVector,
    candidate: &VideoId,
    neighbors: &NeighborTable,
    n: usize,
) -> Result<f64> {
    let mut score = relevance_strategy1(index, seed_phi_normalized, candidate)?;
    if let Some(list) = neighbors.get(candidate) {
        for neighbor in list.iter().take(n) {
            score += relevance_strategy1(index, seed_phi_normalized, neighbor)?;
        }
    }
    Ok(score)
}

/// Ordered (id, score) recommendations for one seed; the seed itself never
/// appears.
#[derive(Clone, Debug)]
pub struct RankedList {
    pub seed: VideoId,
    pub entries: Vec<(VideoId, f64)>,
}

impl RankedList {
    /// The ids of the top k entries (or all, if fewer).
    pub fn top_ids(&self, k: usize) -> impl Iterator<Item = &VideoId> {
        self.entries.iter().take(k).map(|(id, _)| id)
    }
}

/// Scores every candidate against the seed (which must itself be in the
/// index), sorts descending with lexicographic tie-break, and keeps the
/// top k.
pub fn rank_candidates(
    index: &CandidateIndex,
    seed: &VideoId,
    strategy: &Strategy,
    k: usize,
) -> Result<RankedList> {
    if k < 1 {
        return Err(Error::data("k must be ≥ 1"));
    }
    let seed_row = *index
        .row_of
        .get(seed)
        .ok_or_else(|| Error::data(format!("seed {seed} has no features in the candidate set")))?;
    let seed_phi = index.projected.row(seed_row).to_owned();
    let base = index.scores(&seed_phi);

    let mut entries: Vec<(VideoId, f64)> = Vec::with_capacity(index.len().saturating_sub(1));
    for (row, id) in index.ids.iter().enumerate() {
        if row == seed_row {
            continue;
        }
        let score = match strategy {
            Strategy::One => base[row],
            Strategy::Two { neighbors, n } => {
                let mut s = base[row];
                if let Some(list) = neighbors.get(id) {
                    for neighbor in list.iter().take(*n) {
                        let r = index.row_of.get(neighbor).ok_or_else(|| {
                            Error::data(format!(
                                "neighbor {neighbor} of candidate {id} is not in the index"
                            ))
                        })?;
                        s += base[*r];
                    }
                }
                s
            }
        };
        if !score.is_finite() {
            return Err(Error::data(format!("non-finite relevance for candidate {id}")));
        }
        entries.push((id.clone(), score));
    }
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("relevance scores checked finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    entries.truncate(k);
    Ok(RankedList { seed: seed.clone(), entries })
}
