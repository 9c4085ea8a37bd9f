//! Independent oracles shared by the property tests and the acceptance run.
#![allow(dead_code)]

use latent_bo::rng::{self, StreamRng};
use latent_bo::surrogate::gp::{neg_log_likelihood, GpState};
use latent_bo::surrogate::kernel::{gram, kernel_eval, pairwise_distances, KernelParams, N_PARAMS};
use latent_bo::surrogate::mlp::{Activation, FeatureNet};
use nalgebra::{DMatrix, DVector};
use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const H: f64 = 1e-5;

pub fn normal(r: &mut StreamRng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(r))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn random_params(r: &mut StreamRng) -> KernelParams {
    KernelParams::from_constrained(
        (r.random_range(0.3..3.0), r.random_range(0.3..3.0)),
        (r.random_range(0.2..2.0), r.random_range(0.2..2.0)),
        (r.random_range(0.1..1.0), r.random_range(0.1..1.0)),
        r.random_range(0.01..0.5),
    )
}

fn output_coord(net: &FeatureNet, x: &Array2<f64>, k: usize) -> f64 {
    net.forward_batch(x.view()).unwrap().column(k).sum()
}

/// Worst relative error between backprop and central differences over every
/// weight and bias of `trials` random small networks.
pub fn mlp_gradient_worst(trials: u64) -> f64 {
    let mut worst = 0f64;
    for trial in 0..trials {
        let mut r = rng::stream(100 + trial);
        let dims = [r.random_range(2..6), r.random_range(2..8), r.random_range(2..8), r.random_range(1..4)];
        let act = if trial % 4 == 3 { Activation::Identity } else { Activation::Relu };
        let mut net = FeatureNet::init(&dims, act, trial).unwrap();
        // nonzero biases keep ReLU inputs off the kink at exactly zero
        for layer in net.layers_mut() {
            layer.bias.mapv_inplace(|_| 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut r));
        }
        let x = normal(&mut r, 3, dims[0]);
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        for k in 0..dims[3] {
            let mut grad_out = Array2::zeros((3, dims[3]));
            grad_out.column_mut(k).fill(1.0);
            let grads = net.backward(&cache, grad_out.view());
            for (li, g) in grads.iter().enumerate() {
                let fd = |edit: &dyn Fn(&mut FeatureNet, f64)| {
                    let mut plus = net.clone();
                    edit(&mut plus, H);
                    let mut minus = net.clone();
                    edit(&mut minus, -H);
                    (output_coord(&plus, &x, k) - output_coord(&minus, &x, k)) / (2.0 * H)
                };
                for ((i, j), &analytic) in g.weights.indexed_iter() {
                    let num = fd(&|n: &mut FeatureNet, h| n.layers_mut()[li].weights[[i, j]] += h);
                    worst = worst.max(rel_err(analytic, num));
                }
                for (j, &analytic) in g.bias.indexed_iter() {
                    let num = fd(&|n: &mut FeatureNet, h| n.layers_mut()[li].bias[j] += h);
                    worst = worst.max(rel_err(analytic, num));
                }
            }
        }
    }
    worst
}

/// Worst relative error of the NLL gradient over all seven raw parameters.
pub fn gp_nll_gradient_worst(trials: u64) -> f64 {
    let mut worst = 0f64;
    for trial in 0..trials {
        let mut r = rng::stream(500 + trial);
        let p = random_params(&mut r);
        let x = normal(&mut r, 8, 3);
        let y: Array1<f64> = (0..8).map(|_| StandardNormal.sample(&mut r)).collect();
        let dist = pairwise_distances(x.view());
        let eval = neg_log_likelihood(&p, &dist, y.view(), 1e-6).unwrap();
        for i in 0..N_PARAMS {
            let mut plus = p;
            plus.raw[i] += H;
            let mut minus = p;
            minus.raw[i] -= H;
            let fp = neg_log_likelihood(&plus, &dist, y.view(), 1e-6).unwrap().value;
            let fm = neg_log_likelihood(&minus, &dist, y.view(), 1e-6).unwrap().value;
            worst = worst.max(rel_err(eval.grad[i], (fp - fm) / (2.0 * H)));
        }
    }
    worst
}

/// Posterior (mean, std) in target units by solving `(K + s I) a = b` with LU.
pub fn dense_posterior(gp: &GpState, x: &Array2<f64>, y: &Array1<f64>, q: &Array2<f64>) -> Vec<(f64, f64)> {
    let p = gp.params();
    let n = x.nrows();
    let t = gp.transform();
    let k = gram(p, x.view());
    let a = DMatrix::from_fn(n, n, |i, j| k[[i, j]] + if i == j { p.noise() + gp.jitter() } else { 0.0 });
    let lu = a.lu();
    let ys = DVector::from_iterator(n, y.iter().map(|v| (v - t.mean) / t.std));
    let alpha = lu.solve(&ys).unwrap();
    q.outer_iter()
        .map(|row| {
            let ks = DVector::from_iterator(n, x.outer_iter().map(|xi| kernel_eval(p, xi, row)));
            let w = lu.solve(&ks).unwrap();
            let mean = ks.dot(&alpha) * t.std + t.mean;
            let var = (p.prior_variance() + p.noise() - ks.dot(&w)).max(0.0);
            (mean, var.sqrt() * t.std)
        })
        .collect()
}

pub struct DenseComparison {
    pub worst: f64,
    pub min_std: f64,
}

/// Cholesky against LU posteriors on random 10-point problems, probed at
/// fresh points and at training inputs.
pub fn gp_dense_comparison(instances: u64) -> DenseComparison {
    let mut r = rng::stream(77);
    let mut out = DenseComparison {
        worst: 0.0,
        min_std: f64::INFINITY,
    };
    for _ in 0..instances {
        let p = random_params(&mut r);
        let x = normal(&mut r, 10, 4);
        let y: Array1<f64> = (0..10).map(|_| r.random_range(-8.0..2.0)).collect();
        let q = concatenate(Axis(0), &[normal(&mut r, 6, 4).view(), x.slice(s![..3, ..])]).unwrap();
        let gp = GpState::condition(p, x.clone(), y.view(), 1e-6).unwrap();
        let got = gp.predict_batch(q.view()).unwrap();
        for ((m, sd), (dm, ds)) in got.iter().zip(dense_posterior(&gp, &x, &y, &q)) {
            out.min_std = out.min_std.min(*sd);
            out.worst = out.worst.max((m - dm).abs()).max((sd - ds).abs());
        }
    }
    out
}

/// Largest |mean - y| at training inputs with noise and jitter at 1e-12.
pub fn interpolation_worst(instances: u64) -> f64 {
    let mut r = rng::stream(79);
    let mut worst = 0f64;
    for _ in 0..instances {
        let p = KernelParams::from_constrained((1.0, 1.0), (1.0, 1.0), (0.5, 0.5), 1e-12);
        let x = normal(&mut r, 10, 3) * 2.0;
        let y: Array1<f64> = (0..10).map(|_| r.random_range(-10.0..0.0)).collect();
        let gp = GpState::condition(p, x.clone(), y.view(), 1e-12).unwrap();
        for ((m, _), yi) in gp.predict_batch(x.view()).unwrap().into_iter().zip(&y) {
            worst = worst.max((m - yi).abs());
        }
    }
    worst
}
