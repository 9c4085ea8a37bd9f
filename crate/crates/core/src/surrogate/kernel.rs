//! Composite Matérn kernel: a learnable mixture of a Matérn-3/2 and a
//! Matérn-5/2 component, each with its own length scale and output variance.
//!
//! Every positive hyperparameter is stored unconstrained and mapped through
//! softplus, so plain gradient steps never leave the feasible region.

use ndarray::{Array2, ArrayView1, ArrayView2};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inverse of non-positive value");
    if y > 30.0 {
        y
    } else {
        y + (-(-y).exp_m1()).ln()
    }
}

/// d softplus(x) / dx.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Matérn-3/2 shape `(1 + a) e^{-a}` with `a = sqrt(3) r / l`.
pub fn matern32(r: f64, length_scale: f64, variance: f64) -> f64 {
    let a = SQRT3 * r / length_scale;
    variance * (1.0 + a) * (-a).exp()
}

/// Matérn-5/2 shape `(1 + b + b^2/3) e^{-b}` with `b = sqrt(5) r / l`.
pub fn matern52(r: f64, length_scale: f64, variance: f64) -> f64 {
    let b = SQRT5 * r / length_scale;
    variance * (1.0 + b + b * b / 3.0) * (-b).exp()
}

/// Index of each unconstrained parameter in [`KernelParams::raw`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    LengthScale32 = 0,
    Variance32 = 1,
    LengthScale52 = 2,
    Variance52 = 3,
    Weight32 = 4,
    Weight52 = 5,
    Noise = 6,
}

pub const N_PARAMS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub raw: [f64; N_PARAMS],
}

impl KernelParams {
    /// Builds parameters from constrained values. Every value must be > 0.
    pub fn from_constrained(
        length_scales: (f64, f64),
        variances: (f64, f64),
        weights: (f64, f64),
        noise: f64,
    ) -> Self {
        let v = [
            length_scales.0,
            variances.0,
            length_scales.1,
            variances.1,
            weights.0,
            weights.1,
            noise,
        ];
        Self {
            raw: v.map(softplus_inverse),
        }
    }

    pub fn value(&self, p: Param) -> f64 {
        softplus(self.raw[p as usize])
    }

    pub fn length_scales(&self) -> (f64, f64) {
        (self.value(Param::LengthScale32), self.value(Param::LengthScale52))
    }

    pub fn variances(&self) -> (f64, f64) {
        (self.value(Param::Variance32), self.value(Param::Variance52))
    }

    pub fn weights(&self) -> (f64, f64) {
        (self.value(Param::Weight32), self.value(Param::Weight52))
    }

    pub fn noise(&self) -> f64 {
        self.value(Param::Noise)
    }

    /// Kernel value at distance `r`.
    pub fn eval_distance(&self, r: f64) -> f64 {
        let (l1, l2) = self.length_scales();
        let (s1, s2) = self.variances();
        let (w1, w2) = self.weights();
        w1 * matern32(r, l1, s1) + w2 * matern52(r, l2, s2)
    }

    pub fn prior_variance(&self) -> f64 {
        self.eval_distance(0.0)
    }

    /// Gradient of the kernel value at distance `r` with respect to the six
    /// unconstrained kernel parameters (the noise entry is left at zero).
    pub fn grad_distance(&self, r: f64) -> [f64; N_PARAMS] {
        let (l1, l2) = self.length_scales();
        let (s1, s2) = self.variances();
        let (w1, w2) = self.weights();
        let a = SQRT3 * r / l1;
        let b = SQRT5 * r / l2;
        let ea = (-a).exp();
        let eb = (-b).exp();
        let shape32 = (1.0 + a) * ea;
        let shape52 = (1.0 + b + b * b / 3.0) * eb;
        // d/dl of s (1+a) e^{-a} = s a^2 e^{-a} / l
        let dk_dl1 = w1 * s1 * a * a * ea / l1;
        // d/dl of s (1+b+b^2/3) e^{-b} = s b^2 (1+b) e^{-b} / (3 l)
        let dk_dl2 = w2 * s2 * b * b * (1.0 + b) * eb / (3.0 * l2);
        let mut g = [0.0; N_PARAMS];
        g[Param::LengthScale32 as usize] = dk_dl1;
        g[Param::Variance32 as usize] = w1 * shape32;
        g[Param::LengthScale52 as usize] = dk_dl2;
        g[Param::Variance52 as usize] = w2 * shape52;
        g[Param::Weight32 as usize] = s1 * shape32;
        g[Param::Weight52 as usize] = s2 * shape52;
        for (gi, raw) in g.iter_mut().zip(self.raw) {
            *gi *= sigmoid(raw);
        }
        g[Param::Noise as usize] = 0.0;
        g
    }
}

pub fn distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn kernel_eval(params: &KernelParams, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    params.eval_distance(distance(a, b))
}

/// Pairwise distance matrix between the rows of `x`.
pub fn pairwise_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            let r = distance(x.row(i), x.row(j));
            d[[i, j]] = r;
            d[[j, i]] = r;
        }
    }
    d
}

/// Gram matrix `K(x, x)` without any diagonal noise.
pub fn gram(params: &KernelParams, x: ArrayView2<'_, f64>) -> Array2<f64> {
    pairwise_distances(x).mapv(|r| params.eval_distance(r))
}
