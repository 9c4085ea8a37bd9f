//! Deep-kernel GP surrogate over pooled latent embeddings.
//!
//! Training is hierarchical: an MLP feature extractor plus a throwaway affine
//! head is fit by MSE, the head is dropped and the extractor frozen, then a GP
//! with the composite Matérn kernel is fit on the frozen features by marginal
//! likelihood.

pub mod gp;
pub mod kernel;
pub mod mlp;

use ndarray::{Array1, Array2, ArrayView2};

use crate::aggregation::Pooling;
use crate::error::{Error, Result};
use crate::types::{CandidateEmbedding, PredictiveDistribution};

pub use gp::{GpStageConfig, GpStageOutput, GpState, TargetTransform};
pub use kernel::{kernel_eval, KernelParams};
pub use mlp::{Activation, Dense, FeatureNet, FeatureStageConfig, FeatureStageOutput, RegressionHead};

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConfig {
    pub l_max: usize,
    pub pooling: Pooling,
    pub mlp_dims: Vec<usize>,
    pub mlp_lr: f64,
    pub mlp_epochs: usize,
    pub gp_lr: f64,
    pub gp_epochs: usize,
    pub gp_jitter: f64,
    pub seed: u64,
}

/// Losses reported by [`SurrogateModel::fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub mse_curve: Vec<f64>,
    pub nll_curve: Vec<f64>,
    pub final_nll: f64,
}

#[derive(Debug, Clone)]
pub struct SurrogateModel {
    net: FeatureNet,
    gp: GpState,
    l_max: usize,
    pooling: Pooling,
}

impl SurrogateModel {
    /// Assembles a model from already-trained parts.
    pub fn from_parts(net: FeatureNet, gp: GpState, l_max: usize, pooling: Pooling) -> Result<Self> {
        if net.output_dim() != gp.feature_dim() {
            return Err(Error::Shape(format!(
                "feature net emits {} features but GP was fit on {}",
                net.output_dim(),
                gp.feature_dim()
            )));
        }
        Ok(Self {
            net,
            gp,
            l_max,
            pooling,
        })
    }

    /// Trains both stages from scratch on `(embedding, score)` pairs.
    pub fn fit(
        embeddings: &[ArrayView2<'_, f64>],
        scores: &[f64],
        cfg: &SurrogateConfig,
    ) -> Result<(Self, TrainingReport)> {
        if embeddings.len() != scores.len() {
            return Err(Error::Shape(format!(
                "{} embeddings for {} scores",
                embeddings.len(),
                scores.len()
            )));
        }
        let pooled = pool_all(embeddings, cfg.pooling, cfg.l_max)?;
        let y = Array1::from(scores.to_vec());
        let transform = TargetTransform::fit(y.view());
        let y_std = transform.forward(y.view());

        let stage1 = mlp::train_feature_stage(
            pooled.view(),
            y_std.view(),
            &FeatureStageConfig {
                dims: cfg.mlp_dims.clone(),
                lr: cfg.mlp_lr,
                epochs: cfg.mlp_epochs,
                seed: cfg.seed,
                activation: Activation::Relu,
            },
        )?;
        let net = stage1.net;
        let features = net.forward_batch(pooled.view())?;
        let stage2 = gp::train_gp_stage(
            features.view(),
            y.view(),
            &GpStageConfig {
                lr: cfg.gp_lr,
                epochs: cfg.gp_epochs,
                jitter: cfg.gp_jitter,
            },
        )?;
        let report = TrainingReport {
            mse_curve: stage1.losses,
            nll_curve: stage2.nll_curve,
            final_nll: stage2.final_nll,
        };
        Ok((Self::from_parts(net, stage2.state, cfg.l_max, cfg.pooling)?, report))
    }

    pub fn feature_net(&self) -> &FeatureNet {
        &self.net
    }

    pub fn gp(&self) -> &GpState {
        &self.gp
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Frozen features of one embedding sequence.
    pub fn features(&self, vectors: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let pooled = self.pooling.apply(vectors, self.l_max)?;
        self.net.forward(pooled.values.view())
    }

    pub fn predict(&self, cand: &CandidateEmbedding) -> Result<PredictiveDistribution> {
        self.predict_many(&[cand.vectors.view()]).map(|mut v| v.remove(0))
    }

    /// Batched prediction: one triangular solve for the whole batch.
    pub fn predict_many(&self, batch: &[ArrayView2<'_, f64>]) -> Result<Vec<PredictiveDistribution>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let pooled = pool_all(batch, self.pooling, self.l_max)?;
        let feats = self.net.forward_batch(pooled.view())?;
        self.gp
            .predict_batch(feats.view())?
            .into_iter()
            .map(|(m, s)| PredictiveDistribution::new(m, s))
            .collect()
    }
}

/// Pools every sequence into one row of a matrix.
pub fn pool_all(seqs: &[ArrayView2<'_, f64>], pooling: Pooling, l_max: usize) -> Result<Array2<f64>> {
    let first = seqs.first().ok_or(Error::InsufficientData { needed: 1, have: 0 })?;
    let width = 2 * first.ncols();
    let mut out = Array2::zeros((seqs.len(), width));
    for (i, s) in seqs.iter().enumerate() {
        let agg = pooling.apply(s.view(), l_max)?;
        if agg.values.len() != width {
            return Err(Error::Shape("embedding widths differ within a batch".into()));
        }
        out.row_mut(i).assign(&agg.values);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn fit_keeps_feature_net_frozen_and_predicts() {
        let mut r = crate::rng::stream(21);
        let seqs: Vec<Array2<f64>> = (0..12)
            .map(|i| Array2::from_shape_simple_fn((1 + i % 4, 3), || r.random_range(-1.0..1.0)))
            .collect();
        let scores: Vec<f64> = seqs.iter().map(|s| s.sum() - s.nrows() as f64).collect();
        let views: Vec<_> = seqs.iter().map(|s| s.view()).collect();
        let cfg = SurrogateConfig {
            l_max: 6,
            pooling: Pooling::PositionAware,
            mlp_dims: vec![6, 32, 4],
            mlp_lr: 1e-3,
            mlp_epochs: 50,
            gp_lr: 0.1,
            gp_epochs: 30,
            gp_jitter: 1e-6,
            seed: 5,
        };
        let (model, report) = SurrogateModel::fit(&views, &scores, &cfg).unwrap();
        // the net inside the model must equal a fresh stage-1 fit with the same seed
        let pooled = pool_all(&views, cfg.pooling, cfg.l_max).unwrap();
        let y = Array1::from(scores.clone());
        let t = TargetTransform::fit(y.view());
        let stage1 = mlp::train_feature_stage(
            pooled.view(),
            t.forward(y.view()).view(),
            &FeatureStageConfig {
                dims: cfg.mlp_dims.clone(),
                lr: cfg.mlp_lr,
                epochs: cfg.mlp_epochs,
                seed: cfg.seed,
                activation: Activation::Relu,
            },
        )
        .unwrap();
        assert_eq!(model.feature_net(), &stage1.net);
        assert!(report.final_nll <= report.nll_curve[0]);
        let preds = model.predict_many(&views).unwrap();
        assert_eq!(preds.len(), 12);
        assert!(preds.iter().all(|p| p.std >= 0.0 && p.mean.is_finite()));
    }
}
