//! recall@k / hit@k evaluation over ranked recommendations.
//!
//! The panel follows the challenge protocol: recall at k ∈ {50, 100, 200,
//! 300}, hit at k ∈ {5, 10, 20, 30}, aggregated as means over evaluated
//! seeds, and "Sum" — the total of the 8 aggregates (so Sum ∈ [0, 8]).
//!
//! Candidate-set rule: a val-split seed is ranked against train ∪ val; a
//! test-split seed against train ∪ val ∪ test. Ground-truth members
//! missing from the candidate set still count in the recall denominator,
//! and seeds with no ground truth at all are skipped (the report carries
//! the skipped count).

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::datamodel::{Dataset, Split, VideoId};
use crate::error::{Error, Result};
use crate::model::ProjectionModel;
use crate::predict::{build_candidate_index, rank_candidates, NeighborTable, RankedList, Strategy};

/// The k grid for hit@k.
pub const HIT_KS: [usize; 4] = [5, 10, 20, 30];
/// The k grid for recall@k.
pub const RECALL_KS: [usize; 4] = [50, 100, 200, 300];

/// |truth ∩ top-k| / |truth|.
pub fn recall_at_k(ranked: &RankedList, truth: &[VideoId], k: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::data(format!(
            "recall@{k} undefined for seed {} with empty ground truth",
            ranked.seed
        )));
    }
    if k < 1 {
        return Err(Error::data("recall@k needs k ≥ 1"));
    }
    let top: BTreeSet<&VideoId> = ranked.top_ids(k).collect();
    let found = truth.iter().filter(|t| top.contains(*t)).count();
    Ok(found as f64 / truth.len() as f64)
}

/// 1 iff any ground-truth video appears in the top k.
pub fn hit_at_k(ranked: &RankedList, truth: &[VideoId], k: usize) -> Result<f64> {
    Ok(if recall_at_k(ranked, truth, k)? > 0.0 { 1.0 } else { 0.0 })
}

/// One seed's full metric panel.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedMetrics {
    pub hit_at: [f64; 4],
    pub recall_at: [f64; 4],
}

impl SeedMetrics {
    fn compute(ranked: &RankedList, truth: &[VideoId]) -> Result<SeedMetrics> {
        let mut hit_at = [0.0; 4];
        let mut recall_at = [0.0; 4];
        for (i, k) in HIT_KS.iter().enumerate() {
            hit_at[i] = hit_at_k(ranked, truth, *k)?;
        }
        for (i, k) in RECALL_KS.iter().enumerate() {
            recall_at[i] = recall_at_k(ranked, truth, *k)?;
        }
        Ok(SeedMetrics { hit_at, recall_at })
    }
}

/// Aggregated evaluation record: means over evaluated seeds plus their sum.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    /// Mean hit@k for k in [`HIT_KS`], same order.
    pub hit_at: [f64; 4],
    /// Mean recall@k for k in [`RECALL_KS`], same order.
    pub recall_at: [f64; 4],
    /// Total of the 8 aggregates above.
    pub sum: f64,
    /// Seeds in the split that had no ground-truth list.
    pub skipped_seeds: usize,
    /// Number of seeds actually evaluated.
    pub evaluated_seeds: usize,
    /// Per-seed panels, when requested.
    pub per_seed: Option<BTreeMap<VideoId, SeedMetrics>>,
}

/// How `evaluate` scores candidates; neighbor data for strategy 2 is
/// assembled internally from the candidates' own ground-truth lists.
#[derive(Clone, Copy, Debug)]
pub enum StrategySpec {
    One,
    Two { n: usize },
}

/// Candidate ids visible when evaluating `split`.
pub fn candidate_ids(ds: &Dataset, split: Split) -> Vec<VideoId> {
    let visible: &[Split] = match split {
        Split::Train => &[Split::Train],
        Split::Val => &[Split::Train, Split::Val],
        Split::Test => &[Split::Train, Split::Val, Split::Test],
    };
    ds.table
        .split
        .iter()
        .filter(|(_, s)| visible.contains(s))
        .map(|(id, _)| id.clone())
        .collect()
}

/// Known-relevance table over a candidate set: each candidate's
/// ground-truth list filtered to in-set members, order preserved.
pub fn neighbor_table(ds: &Dataset, candidates: &[VideoId]) -> NeighborTable {
    let in_set: BTreeSet<&VideoId> = candidates.iter().collect();
    let mut table = NeighborTable::new();
    for c in candidates {
        let known: Vec<VideoId> = ds
            .table
            .relevant(c)
            .iter()
            .filter(|r| in_set.contains(*r))
            .cloned()
            .collect();
        if !known.is_empty() {
            table.insert(c.clone(), known);
        }
    }
    table
}

/// Evaluates `model` on every seed of `split` that has ground truth.
/// Per-seed work fans out in parallel; aggregation is an ordered,
/// deterministic reduction.
pub fn evaluate(
    model: &ProjectionModel,
    ds: &Dataset,
    split: Split,
    spec: StrategySpec,
    with_per_seed: bool,
) -> Result<MetricsReport> {
    let candidates = candidate_ids(ds, split);
    if candidates.is_empty() {
        return Err(Error::data(format!("no candidate videos for split {split}")));
    }
    let index = build_candidate_index(model, &ds.videos, &candidates)?;
    let strategy = match spec {
        StrategySpec::One => Strategy::One,
        StrategySpec::Two { n } => Strategy::Two {
            neighbors: neighbor_table(ds, &candidates),
            n,
        },
    };

    let split_ids = ds.table.ids_in(split);
    let seeds: Vec<&VideoId> = split_ids
        .iter()
        .filter(|v| !ds.table.relevant(v).is_empty())
        .collect();
    let skipped_seeds = split_ids.len() - seeds.len();
    if seeds.is_empty() {
        return Err(Error::data(format!(
            "split {split} has no seeds with ground-truth lists"
        )));
    }

    let k_max = RECALL_KS[RECALL_KS.len() - 1];
    let per_seed: Vec<(VideoId, SeedMetrics)> = seeds
        .par_iter()
        .map(|seed| {
            let ranked = rank_candidates(&index, seed, &strategy, k_max)?;
            let metrics = SeedMetrics::compute(&ranked, ds.table.relevant(seed))?;
            Ok(((*seed).clone(), metrics))
        })
        .collect::<Result<_>>()?;

    let mut hit_at = [0.0; 4];
    let mut recall_at = [0.0; 4];
    for (_, m) in &per_seed {
        for i in 0..4 {
            hit_at[i] += m.hit_at[i];
            recall_at[i] += m.recall_at[i];
        }
    }
    let count = per_seed.len() as f64;
    for i in 0..4 {
        hit_at[i] /= count;
        recall_at[i] /= count;
    }
    let sum = hit_at.iter().sum::<f64>() + recall_at.iter().sum::<f64>();

    Ok(MetricsReport {
        hit_at,
        recall_at,
        sum,
        skipped_seeds,
        evaluated_seeds: per_seed.len(),
        per_seed: with_per_seed.then(|| per_seed.into_iter().collect()),
    })
}
