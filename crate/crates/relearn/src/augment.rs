//! Feature-level data augmentation, applied at two levels.
//!
//! Frame level: skip sampling with stride s turns one frame sequence into
//! the full-sequence mean plus s strided subsequence means,
//!
//! ```text
//! instance 0 = mean(f_1 … f_n)
//! instance j = mean(f_j, f_{j+s}, f_{j+2s}, …)     j = 1..s
//! ```
//!
//! Video level: each pooled vector v is perturbed by masked Gaussian noise,
//!
//! ```text
//! v* = v + ε·(m ∘ e),   m_i ~ Bernoulli(q),   e ~ N_d(μ, σ²·I)
//! ```
//!
//! with μ and σ estimated from the training features. Augmented instances
//! keep the source video's identity: relevance relations are defined on
//! ids, not on instances.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::datamodel::{mean_pool, FeatureVector};
use crate::error::{Error, Result};

/// Noise distribution parameters for video-level perturbation: a
/// per-dimension mean and one pooled (isotropic) standard deviation.
#[derive(Clone, Debug)]
pub struct NoiseStats {
    pub mu: FeatureVector,
    pub sigma: f64,
}

/// Augmentation switches and strengths.
#[derive(Clone, Copy, Debug)]
pub struct AugmentConfig {
    /// Skip-sampling stride s ≥ 1.
    pub stride: usize,
    /// Bernoulli mask probability q ∈ [0, 1].
    pub mask_prob: f64,
    /// Noise intensity ε ≥ 0.
    pub epsilon: f64,
    pub enable_frame_level: bool,
    pub enable_video_level: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            stride: 12,
            mask_prob: 0.5,
            epsilon: 1.0,
            enable_frame_level: true,
            enable_video_level: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride < 1 {
            return Err(Error::data("augment stride must be ≥ 1"));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::data(format!(
                "mask probability {} outside [0, 1]",
                self.mask_prob
            )));
        }
        if self.epsilon < 0.0 {
            return Err(Error::data(format!("epsilon {} must be ≥ 0", self.epsilon)));
        }
        Ok(())
    }
}

/// Estimates μ (per-dimension mean) and σ, the population standard
/// deviation of all scalar components pooled across dimensions and videos,
/// each component measured against its own dimension's mean.
pub fn estimate_noise_stats<'a, I>(features: I) -> Result<NoiseStats>
where
    I: IntoIterator<Item = &'a FeatureVector>,
{
    let features: Vec<&FeatureVector> = features.into_iter().collect();
    let first = features
        .first()
        .ok_or_else(|| Error::data("noise statistics need a non-empty feature collection"))?;
    let d = first.len();
    let mut mu = Array1::<f64>::zeros(d);
    for v in &features {
        if v.len() != d {
            return Err(Error::data(format!(
                "noise statistics: feature dimension {} != {d}",
                v.len()
            )));
        }
        mu += *v;
    }
    mu /= features.len() as f64;

    let mut sq_dev = 0.0;
    for v in &features {
        for (x, m) in v.iter().zip(mu.iter()) {
            sq_dev += (x - m) * (x - m);
        }
    }
    let sigma = (sq_dev / (features.len() * d) as f64).sqrt();
    Ok(NoiseStats { mu, sigma })
}

/// Skip sampling: the full-sequence mean followed by the means of the s
/// strided subsequences. Start positions beyond the sequence length define
/// empty subsequences and are dropped, so the output has 1 + min(s, n)
/// entries.
pub fn skip_sample(seq: &[FeatureVector], s: usize) -> Result<Vec<FeatureVector>> {
    if s < 1 {
        return Err(Error::data("skip sampling stride must be ≥ 1"));
    }
    let n = seq.len();
    let mut out = Vec::with_capacity(1 + s.min(n));
    out.push(mean_pool(seq)?);
    for j in 1..=s.min(n) {
        let subset: Vec<FeatureVector> = seq
            .iter()
            .skip(j - 1)
            .step_by(s)
            .cloned()
            .collect();
        out.push(mean_pool(&subset)?);
    }
    Ok(out)
}

/// Masked Gaussian perturbation, v* = v + ε·(m ∘ e). The full mask and the
/// full noise vector are always drawn (2·d variates), so the rng stream
/// advances identically whatever ε and q are.
pub fn perturb(
    v: &FeatureVector,
    stats: &NoiseStats,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<FeatureVector> {
    if v.len() != stats.mu.len() {
        return Err(Error::data(format!(
            "perturb: feature dimension {} != noise dimension {}",
            v.len(),
            stats.mu.len()
        )));
    }
    let d = v.len();
    let mask: Vec<bool> = (0..d).map(|_| rng.gen_bool(cfg.mask_prob)).collect();
    let mut out = v.clone();
    for i in 0..d {
        let z: f64 = rng.sample(StandardNormal);
        let e = stats.mu[i] + stats.sigma * z;
        let m = if mask[i] { 1.0 } else { 0.0 };
        out[i] += cfg.epsilon * (m * e);
    }
    Ok(out)
}

/// Both augmentation levels chained: skip sampling (when enabled) followed
/// by per-instance perturbation (when enabled). With everything disabled
/// this degenerates to plain mean pooling.
pub fn augment_multilevel(
    seq: &[FeatureVector],
    stats: &NoiseStats,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<Vec<FeatureVector>> {
    let instances = if cfg.enable_frame_level {
        skip_sample(seq, cfg.stride)?
    } else {
        vec![mean_pool(seq)?]
    };
    if !cfg.enable_video_level {
        return Ok(instances);
    }
    instances
        .iter()
        .map(|v| perturb(v, stats, cfg, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn stats(mu: FeatureVector, sigma: f64) -> NoiseStats {
        NoiseStats { mu, sigma }
    }

    #[test]
    fn noise_stats_hand_cases() {
        let vs = [arr1(&[0.0, 0.0]), arr1(&[2.0, 2.0])];
        let s = estimate_noise_stats(vs.iter()).unwrap();
        assert_eq!(s.mu, arr1(&[1.0, 1.0]));
        assert!((s.sigma - 1.0).abs() < 1e-12);

        let single = [arr1(&[3.0, -5.0, 0.25])];
        let s = estimate_noise_stats(single.iter()).unwrap();
        assert_eq!(s.mu, single[0]);
        assert_eq!(s.sigma, 0.0);

        let same = [arr1(&[1.0]), arr1(&[1.0]), arr1(&[1.0])];
        let s = estimate_noise_stats(same.iter()).unwrap();
        assert_eq!(s.mu, arr1(&[1.0]));
        assert_eq!(s.sigma, 0.0);
    }

    #[test]
    fn noise_stats_rejects_empty_and_mismatch() {
        assert!(estimate_noise_stats(std::iter::empty::<&FeatureVector>()).is_err());
        let vs = [arr1(&[1.0]), arr1(&[1.0, 2.0])];
        assert!(estimate_noise_stats(vs.iter()).is_err());
    }

    #[test]
    fn skip_sample_hand_case() {
        let frames = vec![arr1(&[1.0]), arr1(&[3.0]), arr1(&[5.0]), arr1(&[7.0])];
        let out = skip_sample(&frames, 2).unwrap();
        assert_eq!(out, vec![arr1(&[4.0]), arr1(&[3.0]), arr1(&[5.0])]);
    }

    #[test]
    fn skip_sample_stride_one_collapses() {
        let frames = vec![arr1(&[1.0, 2.0]), arr1(&[3.0, 4.0])];
        let out = skip_sample(&frames, 1).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn skip_sample_short_sequence_drops_empty_starts() {
        let frames = vec![arr1(&[2.0])];
        let out = skip_sample(&frames, 3).unwrap();
        assert_eq!(out, vec![arr1(&[2.0]), arr1(&[2.0])]);
    }

    #[test]
    fn skip_sample_rejects_zero_stride() {
        assert!(skip_sample(&[arr1(&[1.0])], 0).is_err());
    }

    #[test]
    fn perturb_identities() {
        let v = arr1(&[1.0, -2.0, 0.5]);
        let st = stats(arr1(&[0.3, 0.3, 0.3]), 2.0);

        let eps0 = AugmentConfig { epsilon: 0.0, ..AugmentConfig::default() };
        let mut rng = StdRng::seed_from_u64(1);
        assert_eq!(perturb(&v, &st, &eps0, &mut rng).unwrap(), v);

        let q0 = AugmentConfig { mask_prob: 0.0, ..AugmentConfig::default() };
        let mut rng = StdRng::seed_from_u64(1);
        assert_eq!(perturb(&v, &st, &q0, &mut rng).unwrap(), v);
    }

    #[test]
    fn perturb_degenerate_gaussian_adds_scaled_mean() {
        let v = arr1(&[1.0, -2.0]);
        let st = stats(arr1(&[0.5, 0.25]), 0.0);
        let cfg = AugmentConfig { mask_prob: 1.0, epsilon: 2.0, ..AugmentConfig::default() };
        let mut rng = StdRng::seed_from_u64(7);
        let out = perturb(&v, &st, &cfg, &mut rng).unwrap();
        assert_eq!(out, arr1(&[1.0 + 2.0 * 0.5, -2.0 + 2.0 * 0.25]));
    }

    #[test]
    fn perturb_is_deterministic_under_a_seed() {
        let v = arr1(&[0.1, 0.2, 0.3, 0.4]);
        let st = stats(arr1(&[1.0, 1.0, 1.0, 1.0]), 0.7);
        let cfg = AugmentConfig::default();
        let a = perturb(&v, &st, &cfg, &mut StdRng::seed_from_u64(42)).unwrap();
        let b = perturb(&v, &st, &cfg, &mut StdRng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturb_mask_fraction_and_mean_shift() {
        // 10⁴ draws in d=4: roughly half of all components must change,
        // and the average shift per dimension must approach ε·q·μ.
        let d = 4;
        let draws = 10_000;
        let v = arr1(&[0.0; 4]);
        let st = stats(Array1::from_elem(d, 1.0), 1.0);
        let cfg = AugmentConfig::default(); // q = 0.5, ε = 1
        let mut rng = StdRng::seed_from_u64(2024);

        let mut changed = 0usize;
        let mut shift_sum = Array1::<f64>::zeros(d);
        for _ in 0..draws {
            let out = perturb(&v, &st, &cfg, &mut rng).unwrap();
            let delta = &out - &v;
            changed += delta.iter().filter(|x| **x != 0.0).count();
            shift_sum += &delta;
        }
        let fraction = changed as f64 / (draws * d) as f64;
        assert!((fraction - 0.5).abs() <= 0.02, "changed fraction {fraction}");

        // Var(m·e) = q(μ² + σ²) − (qμ)² = 0.75 here, so 3 standard errors
        // of the per-dimension mean is 3·√(0.75/draws) ≈ 0.026.
        let expected = cfg.epsilon * cfg.mask_prob * 1.0;
        let tol = 3.0 * (0.75f64 / draws as f64).sqrt();
        for mean_shift in (shift_sum / draws as f64).iter() {
            assert!(
                (mean_shift - expected).abs() <= tol,
                "mean shift {mean_shift} vs expected {expected} ± {tol}"
            );
        }
    }

    #[test]
    fn multilevel_composition() {
        let frames = vec![arr1(&[1.0, 0.0]), arr1(&[3.0, 2.0])];
        let st = stats(arr1(&[1.0, 1.0]), 0.5);

        let off = AugmentConfig {
            enable_frame_level: false,
            enable_video_level: false,
            ..AugmentConfig::default()
        };
        let mut rng = StdRng::seed_from_u64(3);
        let out = augment_multilevel(&frames, &st, &off, &mut rng).unwrap();
        assert_eq!(out, vec![arr1(&[2.0, 1.0])]);

        let frame_only = AugmentConfig {
            stride: 2,
            enable_video_level: false,
            ..AugmentConfig::default()
        };
        let frames4 = vec![arr1(&[1.0]), arr1(&[3.0]), arr1(&[5.0]), arr1(&[7.0])];
        let out = augment_multilevel(&frames4, &st, &frame_only, &mut rng);
        // Stats have d=2 but these frames have d=1; with video level off the
        // stats are unused, so this still succeeds.
        assert_eq!(out.unwrap().len(), 3);

        let video_only_eps0 = AugmentConfig {
            enable_frame_level: false,
            epsilon: 0.0,
            ..AugmentConfig::default()
        };
        let out = augment_multilevel(&frames, &st, &video_only_eps0, &mut rng).unwrap();
        assert_eq!(out, vec![arr1(&[2.0, 1.0])]);
    }

    proptest! {
        /// Exactly s+1 instances whenever the sequence is long enough, and
        /// every instance equals the mean over its defining index set
        /// (checked against an independent index enumerator).
        #[test]
        fn skip_sample_counts_and_subset_means(
            n in 1usize..40,
            s in 1usize..15,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = StdRng::seed_from_u64(seed);
            let frames: Vec<FeatureVector> = (0..n)
                .map(|_| arr1(&[rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]))
                .collect();
            let out = skip_sample(&frames, s).unwrap();
            prop_assert_eq!(out.len(), 1 + s.min(n));
            if n >= s {
                prop_assert_eq!(out.len(), s + 1);
            }

            for (j, inst) in out.iter().enumerate().skip(1) {
                // Independent enumeration of 1-based indices j, j+s, j+2s, …
                let mut indices = Vec::new();
                let mut idx = j;
                while idx <= n {
                    indices.push(idx);
                    idx += s;
                }
                let mut expected = Array1::<f64>::zeros(2);
                for i in &indices {
                    expected += &frames[i - 1];
                }
                expected /= indices.len() as f64;
                for (a, b) in inst.iter().zip(expected.iter()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
