//! Exact Gaussian-process regression on frozen features with marginal
//! likelihood fitting of the composite kernel.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::kernel::{self, KernelParams, Param, N_PARAMS};
use super::mlp::AdamState;
use crate::error::{Error, Result};

/// Upper bound of the jitter escalation schedule.
pub const MAX_JITTER: f64 = 1e-2;
pub const DEFAULT_JITTER: f64 = 1e-6;

/// Affine standardization of targets to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetTransform {
    pub mean: f64,
    pub std: f64,
}

impl TargetTransform {
    /// Population statistics; a zero spread (including a single target) maps
    /// to `std = 1` so the transform stays invertible.
    pub fn fit(y: ArrayView1<'_, f64>) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.sum() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let std = if y.len() > 1 && std > 1e-12 { std } else { 1.0 };
        Self { mean, std }
    }

    pub fn forward(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        y.mapv(|v| (v - self.mean) / self.std)
    }

    pub fn inverse(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        y.mapv(|v| v * self.std + self.mean)
    }
}

/// Lower Cholesky factor, or `None` if `a` is not numerically positive definite.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag.is_finite() && diag > 0.0) {
            return None;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Some(l)
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &Array2<f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        for k in 0..i {
            let lik = l[[i, k]];
            if lik != 0.0 {
                let (head, mut tail) = x.view_mut().split_at(Axis(0), i);
                tail.row_mut(0).scaled_add(-lik, &head.row(k));
            }
        }
        let lii = l[[i, i]];
        x.row_mut(i).mapv_inplace(|v| v / lii);
    }
    x
}

/// Solves `L^T X = B` for lower-triangular `L`.
pub fn solve_upper_t(l: &Array2<f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[[k, i]];
            if lki != 0.0 {
                let (mut head, tail) = x.view_mut().split_at(Axis(0), i + 1);
                head.row_mut(i).scaled_add(-lki, &tail.row(k - i - 1));
            }
        }
        let lii = l[[i, i]];
        x.row_mut(i).mapv_inplace(|v| v / lii);
    }
    x
}

fn cho_solve_vec(l: &Array2<f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let col = b.insert_axis(Axis(1));
    let z = solve_lower(l, col);
    solve_upper_t(l, z.view()).column(0).to_owned()
}

/// Factorizes `K + (noise + jitter) I`, escalating jitter tenfold from
/// `jitter` up to [`MAX_JITTER`]. Returns the factor and the jitter used.
pub fn jittered_cholesky(k: &Array2<f64>, noise: f64, jitter: f64) -> Result<(Array2<f64>, f64)> {
    let mut j = jitter.max(0.0);
    loop {
        let mut a = k.clone();
        a.diag_mut().mapv_inplace(|v| v + noise + j);
        if let Some(l) = cholesky(&a) {
            return Ok((l, j));
        }
        if j >= MAX_JITTER {
            return Err(Error::Cholesky { jitter: j });
        }
        j = if j == 0.0 { DEFAULT_JITTER } else { (j * 10.0).min(MAX_JITTER) };
    }
}

/// Negative log marginal likelihood and its gradient with respect to the
/// unconstrained parameters, for standardized targets.
#[derive(Debug, Clone)]
pub struct NllEval {
    pub value: f64,
    pub grad: [f64; N_PARAMS],
    pub jitter: f64,
}

pub fn neg_log_likelihood(
    params: &KernelParams,
    dist: &Array2<f64>,
    y: ArrayView1<'_, f64>,
    jitter: f64,
) -> Result<NllEval> {
    let n = y.len();
    let k = dist.mapv(|r| params.eval_distance(r));
    let (l, used) = jittered_cholesky(&k, params.noise(), jitter)?;
    let alpha = cho_solve_vec(&l, y);
    let log_det_half: f64 = l.diag().iter().map(|v| v.ln()).sum();
    let value = 0.5 * y.dot(&alpha) + log_det_half + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // W = K_y^{-1} - alpha alpha^T ; dNLL = 0.5 tr(W dK)
    let eye = Array2::<f64>::eye(n);
    let linv = solve_lower(&l, eye.view());
    let mut w = linv.t().dot(&linv);
    for i in 0..n {
        for j in 0..n {
            w[[i, j]] -= alpha[i] * alpha[j];
        }
    }
    let mut grad = [0.0; N_PARAMS];
    for i in 0..n {
        for j in 0..n {
            let g = params.grad_distance(dist[[i, j]]);
            let wij = w[[i, j]];
            for (acc, gp) in grad.iter_mut().zip(g) {
                *acc += 0.5 * wij * gp;
            }
        }
    }
    grad[Param::Noise as usize] = 0.5 * w.diag().sum() * kernel::sigmoid(params.raw[Param::Noise as usize]);
    Ok(NllEval {
        value,
        grad,
        jitter: used,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpStageConfig {
    pub lr: f64,
    pub epochs: usize,
    pub jitter: f64,
}

impl Default for GpStageConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 100,
            jitter: DEFAULT_JITTER,
        }
    }
}

/// Fitted GP posterior state over standardized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GpState {
    params: KernelParams,
    x: Array2<f64>,
    y_std: Array1<f64>,
    transform: TargetTransform,
    chol: Array2<f64>,
    alpha: Array1<f64>,
    jitter: f64,
}

impl GpState {
    /// Conditions the GP on `(x, y)` at fixed hyperparameters.
    pub fn condition(params: KernelParams, x: Array2<f64>, y: ArrayView1<'_, f64>, jitter: f64) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InsufficientData { needed: 1, have: 0 });
        }
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} feature rows for {} targets", x.nrows(), y.len())));
        }
        let transform = TargetTransform::fit(y);
        let y_std = transform.forward(y);
        let k = kernel::gram(&params, x.view());
        let (chol, jitter) = jittered_cholesky(&k, params.noise(), jitter)?;
        let alpha = cho_solve_vec(&chol, y_std.view());
        Ok(Self {
            params,
            x,
            y_std,
            transform,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn transform(&self) -> TargetTransform {
        self.transform
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn chol(&self) -> &Array2<f64> {
        &self.chol
    }

    pub fn train_inputs(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn standardized_targets(&self) -> &Array1<f64> {
        &self.y_std
    }

    pub fn feature_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Posterior mean and standard deviation in original target units for
    /// each row of `xs`. Includes observation noise in the variance.
    pub fn predict_batch(&self, xs: ArrayView2<'_, f64>) -> Result<Vec<(f64, f64)>> {
        if xs.ncols() != self.x.ncols() {
            return Err(Error::Shape(format!(
                "GP expects {} features, got {}",
                self.x.ncols(),
                xs.ncols()
            )));
        }
        let n = self.x.nrows();
        let m = xs.nrows();
        let mut cross = Array2::<f64>::zeros((n, m));
        for (j, q) in xs.outer_iter().enumerate() {
            for (i, t) in self.x.outer_iter().enumerate() {
                cross[[i, j]] = kernel::kernel_eval(&self.params, t, q);
            }
        }
        let v = solve_lower(&self.chol, cross.view());
        let prior = self.params.prior_variance() + self.params.noise();
        let out = (0..m)
            .map(|j| {
                let mean_std = cross.column(j).dot(&self.alpha);
                let explained: f64 = v.column(j).iter().map(|x| x * x).sum();
                let var_std = (prior - explained).max(0.0);
                let mean = mean_std * self.transform.std + self.transform.mean;
                let std = var_std.sqrt() * self.transform.std;
                (mean, std)
            })
            .collect();
        Ok(out)
    }

    /// NLL of the stored standardized targets at the stored parameters.
    pub fn neg_log_likelihood(&self) -> Result<f64> {
        let dist = kernel::pairwise_distances(self.x.view());
        Ok(neg_log_likelihood(&self.params, &dist, self.y_std.view(), self.jitter)?.value)
    }
}

#[derive(Debug, Clone)]
pub struct GpStageOutput {
    pub state: GpState,
    /// NLL at the initial parameters, then after every epoch.
    pub nll_curve: Vec<f64>,
    /// NLL of the returned state.
    pub final_nll: f64,
}

/// Initial hyperparameters: both length scales at the median pairwise
/// feature distance, unit variances, equal weights and noise 0.1.
pub fn initial_params(x: ArrayView2<'_, f64>) -> KernelParams {
    let d = kernel::pairwise_distances(x);
    let mut off: Vec<f64> = Vec::new();
    for i in 0..d.nrows() {
        for j in 0..i {
            off.push(d[[i, j]]);
        }
    }
    off.sort_by(f64::total_cmp);
    let med = off.get(off.len() / 2).copied().unwrap_or(1.0);
    let ls = if med > 1e-8 && med.is_finite() { med } else { 1.0 };
    KernelParams::from_constrained((ls, ls), (1.0, 1.0), (0.5, 0.5), 0.1)
}

/// Fits kernel hyperparameters by Adam on the NLL and returns the lowest-NLL
/// iterate conditioned on the data.
pub fn train_gp_stage(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, cfg: &GpStageConfig) -> Result<GpStageOutput> {
    train_gp_stage_from(initial_params(x), x, y, cfg)
}

pub fn train_gp_stage_from(
    init: KernelParams,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    cfg: &GpStageConfig,
) -> Result<GpStageOutput> {
    if x.nrows() == 0 {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} feature rows for {} targets", x.nrows(), y.len())));
    }
    let transform = TargetTransform::fit(y);
    let y_std = transform.forward(y);
    let dist = kernel::pairwise_distances(x);

    let mut params = init;
    let first = neg_log_likelihood(&params, &dist, y_std.view(), cfg.jitter)?;
    let mut best = (first.value, params);
    let mut curve = vec![first.value];
    let mut current = first;

    // Adam over the raw parameter vector, expressed as a 1x7 dense layer.
    let mut layer = super::mlp::Dense {
        weights: Array2::zeros((1, N_PARAMS)),
        bias: Array1::zeros(0),
    };
    layer.weights.row_mut(0).assign(&ArrayView1::from(&params.raw));
    let mut adam = AdamState::new(&[&layer], cfg.lr);
    for _ in 0..cfg.epochs {
        let mut g = super::mlp::DenseGrad {
            weights: Array2::zeros((1, N_PARAMS)),
            bias: Array1::zeros(0),
        };
        g.weights.row_mut(0).assign(&ArrayView1::from(&current.grad));
        adam.update(&mut [&mut layer], &[g]);
        for (r, w) in params.raw.iter_mut().zip(layer.weights.iter()) {
            *r = *w;
        }
        match neg_log_likelihood(&params, &dist, y_std.view(), cfg.jitter) {
            Ok(eval) if eval.value.is_finite() => {
                curve.push(eval.value);
                if eval.value < best.0 {
                    best = (eval.value, params);
                }
                current = eval;
            }
            // the optimizer stepped somewhere numerically infeasible; keep the best so far
            _ => break,
        }
    }
    let state = GpState::condition(best.1, x.to_owned(), y, cfg.jitter)?;
    Ok(GpStageOutput {
        state,
        nll_curve: curve,
        final_nll: best.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn cholesky_reconstructs() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let l = cholesky(&a).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(l.diag().iter().all(|&v| v > 0.0));
        assert!(cholesky(&array![[1.0, 2.0], [2.0, 1.0]]).is_none());
    }

    #[test]
    fn triangular_solves() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let l = cholesky(&a).unwrap();
        let b = array![[1.0], [2.0]];
        let x = solve_upper_t(&l, solve_lower(&l, b.view()).view());
        let ax = a.dot(&x);
        assert!((ax[[0, 0]] - 1.0).abs() < 1e-12 && (ax[[1, 0]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn jitter_escalates_then_fails() {
        let k = Array2::<f64>::ones((3, 3));
        let (_, used) = jittered_cholesky(&k, 0.0, 1e-6).unwrap();
        assert!(used >= 1e-6);
        let neg = array![[-1.0, 0.0], [0.0, -1.0]];
        match jittered_cholesky(&neg, 0.0, 1e-6) {
            Err(Error::Cholesky { jitter }) => assert_eq!(jitter, MAX_JITTER),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn transform_round_trip() {
        let y = array![-3.5, 2.0, 7.25, -0.125];
        let t = TargetTransform::fit(y.view());
        let back = t.inverse(t.forward(y.view()).view());
        for (a, b) in back.iter().zip(y.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(TargetTransform::fit(array![4.0].view()).std, 1.0);
        assert_eq!(TargetTransform::fit(array![4.0, 4.0].view()).std, 1.0);
    }

    #[test]
    fn single_point_closed_form() {
        let x = array![[0.3, -0.2]];
        let y = array![-7.0];
        let out = train_gp_stage(x.view(), y.view(), &GpStageConfig::default()).unwrap();
        let p = out.state.params();
        // standardized target of a single point is 0
        let var = p.prior_variance() + p.noise() + out.state.jitter();
        let direct = 0.5 * (2.0 * std::f64::consts::PI * var).ln();
        assert!((out.final_nll - direct).abs() < 1e-10);
        assert!(out.final_nll <= out.nll_curve[0]);
    }

    #[test]
    fn training_improves_nll() {
        let mut r = crate::rng::stream(4);
        let x = Array2::from_shape_simple_fn((25, 3), || r.random_range(-2.0f64..2.0));
        let y = x.map_axis(Axis(1), |row| (row[0] * 1.5).sin() + row[1] * row[2] * 0.3);
        let out = train_gp_stage(x.view(), y.view(), &GpStageConfig::default()).unwrap();
        assert!(out.final_nll <= out.nll_curve[0]);
        assert!(out.final_nll < out.nll_curve[0] - 1.0, "{:?}", (out.nll_curve[0], out.final_nll));
        let again = train_gp_stage(x.view(), y.view(), &GpStageConfig::default()).unwrap();
        assert_eq!(out.state, again.state);
    }

    #[test]
    fn prediction_far_from_data_recovers_prior() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let y = array![-5.0, -3.0, -4.0];
        let p = KernelParams::from_constrained((0.5, 0.5), (1.0, 1.0), (0.5, 0.5), 0.01);
        let gp = GpState::condition(p, x, y.view(), 1e-6).unwrap();
        let t = gp.transform();
        let far = array![[1e3, -1e3]];
        let (mean, std) = gp.predict_batch(far.view()).unwrap()[0];
        assert!((mean - t.mean).abs() < 1e-9);
        let prior_std = (p.prior_variance() + p.noise()).sqrt() * t.std;
        assert!((std - prior_std).abs() < 1e-9);
    }
}
