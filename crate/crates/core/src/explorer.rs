//! Latent exploration: multiplicative perturbation sampling, the confidence
//! schedule, LCB scoring and candidate selection.

use ndarray::Array2;
use rand::seq::index;
use rand_distr::{Distribution, Normal};

use crate::dataset::ObservedDataset;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::surrogate::SurrogateModel;
use crate::types::{CandidateEmbedding, PredictiveDistribution, TokenEmbeddingSeq};

/// Multiplies every entry of `z` by an independent draw from
/// `N(1, lambda_perturb)`, where `lambda_perturb` is the variance.
pub fn perturb(z: &TokenEmbeddingSeq, lambda_perturb: f64, noise_seed: u64, source_index: usize) -> Result<CandidateEmbedding> {
    if !(lambda_perturb.is_finite() && lambda_perturb >= 0.0) {
        return Err(Error::invalid("lambda_perturb", format!("must be a finite value >= 0, got {lambda_perturb}")));
    }
    let mut vectors = z.vectors().clone();
    if lambda_perturb > 0.0 {
        let normal = Normal::new(1.0, lambda_perturb.sqrt()).map_err(|e| Error::invalid("lambda_perturb", e.to_string()))?;
        let mut r = rng::stream(noise_seed);
        vectors.mapv_inplace(|v| v * normal.sample(&mut r));
    }
    Ok(CandidateEmbedding {
        vectors,
        source_index,
        noise_seed,
        acquisition: None,
        prediction: None,
    })
}

#[derive(Debug, Clone)]
pub struct ExploreSet {
    pub candidates: Vec<CandidateEmbedding>,
    pub seed: u64,
    pub per_record: usize,
}

impl ExploreSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Default perturbations per record: `clamp(ceil(2000 / n), 5, 200)`.
pub fn default_samples_per_record(n_records: usize) -> usize {
    2000usize.div_ceil(n_records.max(1)).clamp(5, 200)
}

/// `per_record` perturbations of every record in `sources` (indices into
/// `ds`). Candidate `i * per_record + j` uses noise seed
/// `derive_seed(seed, i * per_record + j)`.
pub fn build_explore_set(
    ds: &ObservedDataset,
    sources: &[usize],
    per_record: usize,
    lambda_perturb: f64,
    seed: u64,
) -> Result<ExploreSet> {
    if ds.is_empty() || sources.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    if per_record == 0 {
        return Err(Error::invalid("samples_per_record", "must be at least 1"));
    }
    let mut candidates = Vec::with_capacity(sources.len() * per_record);
    for (slot, &src) in sources.iter().enumerate() {
        let rec = ds
            .records()
            .get(src)
            .ok_or_else(|| Error::invalid("source_index", format!("{src} out of range")))?;
        let emb = rec
            .embedding
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset", format!("record {src} has no embedding")))?;
        for j in 0..per_record {
            let counter = (slot * per_record + j) as u64;
            candidates.push(perturb(emb, lambda_perturb, rng::derive_seed(seed, counter), src)?);
        }
    }
    Ok(ExploreSet {
        candidates,
        seed,
        per_record,
    })
}

/// Exploration weight `sqrt(2 ln(t^2 pi^2 / (6 delta)))`.
pub fn kappa(t: u64, delta: f64) -> Result<f64> {
    if t < 1 {
        return Err(Error::invalid("t", "must be >= 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    let t = t as f64;
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    Ok((2.0 * (t * t * pi2 / (6.0 * delta)).ln()).sqrt())
}

/// Lower confidence bound `mean - kappa * std`; lower is more promising.
pub fn lcb(pred: &PredictiveDistribution, kappa: f64) -> f64 {
    pred.mean - kappa * pred.std
}

/// Indices of the `n` smallest values, ascending, ties by lower index.
pub fn bottom_k(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Scores every explore point by LCB under `model` and keeps the `n_cand`
/// lowest. Returned candidates carry their prediction and acquisition.
pub fn select_candidates(
    explore: &ExploreSet,
    model: &SurrogateModel,
    n_cand: usize,
    t: u64,
    delta: f64,
) -> Result<Vec<CandidateEmbedding>> {
    if n_cand == 0 {
        return Err(Error::invalid("n_cand", "must be at least 1"));
    }
    let k = kappa(t, delta)?;
    const BATCH: usize = 512;
    let mut preds = Vec::with_capacity(explore.len());
    for chunk in explore.candidates.chunks(BATCH) {
        let views: Vec<_> = chunk.iter().map(|c| c.vectors.view()).collect();
        preds.extend(model.predict_many(&views)?);
    }
    let acq: Vec<f64> = preds.iter().map(|p| lcb(p, k)).collect();
    Ok(bottom_k(&acq, n_cand)
        .into_iter()
        .map(|i| {
            let mut c = explore.candidates[i].clone();
            c.acquisition = Some(acq[i]);
            c.prediction = Some(preds[i]);
            c
        })
        .collect())
}

/// Uniform sample without replacement; the unguided ablation.
pub fn select_random(explore: &ExploreSet, n_cand: usize, rng: &mut StreamRng) -> Vec<CandidateEmbedding> {
    let n = n_cand.min(explore.len());
    index::sample(rng, explore.len(), n)
        .into_iter()
        .map(|i| explore.candidates[i].clone())
        .collect()
}

/// Shape-preserving check used in tests and by the campaign loop.
pub fn same_shape(a: &Array2<f64>, b: &Array2<f64>) -> bool {
    a.dim() == b.dim()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ObservedRecord;
    use ndarray::array;
    use std::collections::HashSet;

    fn seq(rows: Array2<f64>) -> TokenEmbeddingSeq {
        let n = rows.nrows();
        TokenEmbeddingSeq::new((0..n as u32).collect(), rows).unwrap()
    }

    fn dataset(n: usize) -> ObservedDataset {
        (0..n)
            .map(|i| {
                let e = seq(Array2::from_elem((i + 1, 2), i as f64 + 1.0));
                ObservedRecord::new(format!("s{i}"), Some(e), -(i as f64)).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_noise_is_identity() {
        let z = seq(array![[1.0, -2.0], [0.5, 3.0]]);
        let c = perturb(&z, 0.0, 99, 0).unwrap();
        assert_eq!(&c.vectors, z.vectors());
        assert!(perturb(&z, -0.1, 1, 0).is_err());
    }

    #[test]
    fn perturb_is_reproducible_and_shape_preserving() {
        let z = seq(array![[1.0, -2.0, 0.3], [0.5, 3.0, 1.0]]);
        let before = z.clone();
        let a = perturb(&z, 0.4, 7, 0).unwrap();
        let b = perturb(&z, 0.4, 7, 0).unwrap();
        assert_eq!(a, b);
        assert!(same_shape(&a.vectors, z.vectors()));
        assert_eq!(z, before);
        assert_ne!(&a.vectors, z.vectors());
    }

    #[test]
    fn perturbation_mean_matches_source() {
        // E[z * eps] = z; check within 3 standard errors per element
        let z = seq(array![[2.0, -1.0], [0.5, 4.0]]);
        let lambda: f64 = 0.4;
        let draws = 100_000;
        let mut sum = Array2::<f64>::zeros((2, 2));
        for s in 0..draws {
            sum += &perturb(&z, lambda, rng::derive_seed(5, s), 0).unwrap().vectors;
        }
        let mean = sum / draws as f64;
        for (m, v) in mean.iter().zip(z.vectors().iter()) {
            let se = v.abs() * lambda.sqrt() / (draws as f64).sqrt();
            assert!((m - v).abs() <= 3.0 * se, "{m} vs {v}");
        }
    }

    #[test]
    fn explore_set_counts_and_seeds() {
        let ds = dataset(3);
        let ex = build_explore_set(&ds, &[0, 1, 2], 4, 0.4, 11).unwrap();
        assert_eq!(ex.len(), 12);
        for src in 0..3 {
            assert_eq!(ex.candidates.iter().filter(|c| c.source_index == src).count(), 4);
        }
        let seeds: HashSet<u64> = ex.candidates.iter().map(|c| c.noise_seed).collect();
        assert_eq!(seeds.len(), 12);
        for c in &ex.candidates {
            let src = ds.records()[c.source_index].embedding.as_ref().unwrap();
            assert!(same_shape(&c.vectors, src.vectors()));
        }

        let ex = build_explore_set(&ds, &[0, 1, 2], 1, 0.0, 11).unwrap();
        for c in &ex.candidates {
            assert_eq!(&c.vectors, ds.records()[c.source_index].embedding.as_ref().unwrap().vectors());
        }
        assert!(build_explore_set(&ObservedDataset::new(), &[], 3, 0.1, 0).is_err());
    }

    #[test]
    fn kappa_values() {
        assert!((kappa(1, 0.1).unwrap() - 2.3672).abs() < 1e-3);
        assert!((kappa(101, 0.1).unwrap() - 4.9052).abs() < 1e-3);
        assert!(kappa(0, 0.1).is_err());
        assert!(kappa(3, 1.0).is_err());
        assert!(kappa(3, 0.0).is_err());
        let mut prev = kappa(1, 0.1).unwrap();
        for t in 2..2000 {
            let k = kappa(t, 0.1).unwrap();
            assert!(k > prev);
            prev = k;
        }
    }

    #[test]
    fn lcb_examples() {
        let p = PredictiveDistribution::new(-8.0, 0.5).unwrap();
        assert_eq!(lcb(&p, 2.0), -9.0);
        assert_eq!(lcb(&PredictiveDistribution::new(-3.0, 0.0).unwrap(), 4.0), -3.0);
        assert_eq!(lcb(&p, 0.0), -8.0);
    }

    #[test]
    fn bottom_k_rules() {
        assert_eq!(bottom_k(&[3.0, 1.0, 2.0], 2), vec![1, 2]);
        assert_eq!(bottom_k(&[3.0, 1.0, 2.0], 10), vec![1, 2, 0]);
        // four equal values, pick two: the lowest indices win
        assert_eq!(bottom_k(&[5.0, 5.0, 5.0, 5.0], 2), vec![0, 1]);
        assert_eq!(bottom_k(&[2.0, 1.0, 1.0, 0.0, 1.0], 3), vec![3, 1, 2]);
    }

    #[test]
    fn random_selection() {
        let ds = dataset(2);
        let ex = build_explore_set(&ds, &[0, 1], 5, 0.4, 3).unwrap();
        let all = select_random(&ex, 10, &mut rng::stream(1));
        let seeds: HashSet<u64> = all.iter().map(|c| c.noise_seed).collect();
        assert_eq!(seeds.len(), 10);
        let a = select_random(&ex, 3, &mut rng::stream(8));
        let b = select_random(&ex, 3, &mut rng::stream(8));
        assert_eq!(a, b);
    }

    #[test]
    fn random_selection_is_uniform() {
        let ds = dataset(1);
        let ex = build_explore_set(&ds, &[0], 10, 0.4, 3).unwrap();
        let mut counts = [0usize; 10];
        let mut r = rng::stream(77);
        for _ in 0..10_000 {
            let pick = select_random(&ex, 1, &mut r);
            let pos = ex.candidates.iter().position(|c| c.noise_seed == pick[0].noise_seed).unwrap();
            counts[pos] += 1;
        }
        assert!(counts.iter().all(|&c| (900..=1100).contains(&c)), "{counts:?}");
    }
}
