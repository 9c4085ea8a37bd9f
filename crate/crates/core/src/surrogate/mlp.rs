//! Dense feed-forward feature extractor and its first-stage regression fit.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    /// No nonlinearity anywhere; the net is an affine map.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Affine layer `x -> x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn he_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound));
        Self {
            weights,
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights);
        z += &self.bias;
        z
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Hidden layers use `activation`; the output layer is always linear.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet {
    layers: Vec<Dense>,
    activation: Activation,
}

/// Per-layer pre-activations and the layer inputs, kept for backprop.
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl FeatureNet {
    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("feature net needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Shape(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].fan_out(),
                    pair[1].fan_in()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::Shape("bias length differs from layer width".into()));
            }
        }
        if !layers.iter().all(Dense::is_finite) {
            return Err(Error::NonFinite("feature net parameters"));
        }
        Ok(Self { layers, activation })
    }

    /// Randomly initialized net with layer widths `dims` (input first).
    pub fn init(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("mlp_dims", "need at least two positive widths"));
        }
        let mut r = rng::stream(seed);
        let layers = dims
            .windows(2)
            .map(|w| Dense::he_uniform(w[0], w[1], &mut r))
            .collect();
        Self::from_layers(layers, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::fan_out).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "feature net expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let batch = x.insert_axis(Axis(0));
        Ok(self.forward_batch(batch)?.row(0).to_owned())
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "feature net expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(a.view());
            let next = if i == last {
                z.clone()
            } else {
                z.mapv(|v| self.activation.apply(v))
            };
            cache.inputs.push(a);
            cache.pre.push(z);
            a = next;
        }
        Ok((a, cache))
    }

    /// Backpropagates `grad_out` (batch x output_dim, the loss gradient with
    /// respect to the net output) and returns parameter gradients per layer.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<'_, f64>) -> Vec<DenseGrad> {
        let last = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.to_owned();
        for i in (0..=last).rev() {
            if i != last {
                let act = self.activation;
                Zip::from(&mut delta)
                    .and(&cache.pre[i])
                    .for_each(|d, &z| *d *= act.derivative(z));
            }
            let gw = cache.inputs[i].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&self.layers[i].weights.t());
            }
            grads.push(DenseGrad { weights: gw, bias: gb });
        }
        grads.reverse();
        grads
    }
}

/// Adam moment buffers for a list of dense layers.
#[derive(Debug, Clone)]
pub(crate) struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<DenseGrad>,
    v: Vec<DenseGrad>,
}

impl AdamState {
    pub(crate) fn new(layers: &[&Dense], lr: f64) -> Self {
        let zeros = |l: &&Dense| DenseGrad {
            weights: Array2::zeros(l.weights.dim()),
            bias: Array1::zeros(l.bias.len()),
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: layers.iter().map(zeros).collect(),
            v: layers.iter().map(zeros).collect(),
        }
    }

    pub(crate) fn update(&mut self, layers: &mut [&mut Dense], grads: &[DenseGrad]) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.lr;
        for (((layer, g), m), v) in layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let step = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(step);
            Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(step);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStageConfig {
    pub dims: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub activation: Activation,
}

/// Affine head `R^{d'} -> R` used only during the first stage.
pub type RegressionHead = Dense;

#[derive(Debug, Clone)]
pub struct FeatureStageOutput {
    pub net: FeatureNet,
    pub head: RegressionHead,
    /// MSE before the first update, then after every epoch.
    pub losses: Vec<f64>,
}

fn mse_and_grad(pred: &Array2<f64>, y: ArrayView1<'_, f64>) -> (f64, Array2<f64>) {
    let n = y.len() as f64;
    let mut grad = pred.clone();
    let mut loss = 0.0;
    for (g, &t) in grad.column_mut(0).iter_mut().zip(y.iter()) {
        let r = *g - t;
        loss += r * r;
        *g = 2.0 * r / n;
    }
    (loss / n, grad)
}

/// Full-batch Adam on `MSE(head(net(x)), y)`. Inputs are pooled embeddings,
/// targets are already standardized.
pub fn train_feature_stage(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    cfg: &FeatureStageConfig,
) -> Result<FeatureStageOutput> {
    if x.nrows() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            have: x.nrows(),
        });
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} inputs for {} targets", x.nrows(), y.len())));
    }
    if cfg.dims.first() != Some(&x.ncols()) {
        return Err(Error::Shape(format!(
            "mlp input width {:?} does not match pooled width {}",
            cfg.dims.first(),
            x.ncols()
        )));
    }
    let mut net = FeatureNet::init(&cfg.dims, cfg.activation, cfg.seed)?;
    let feat = net.output_dim();
    let mut head = {
        let mut r = rng::stream(rng::derive_seed(cfg.seed, 1));
        let bound = (6.0 / (feat + 1) as f64).sqrt();
        Dense {
            weights: Array2::from_shape_simple_fn((feat, 1), || r.random_range(-bound..bound)),
            bias: Array1::zeros(1),
        }
    };
    let mut adam = {
        let mut all: Vec<&Dense> = net.layers.iter().collect();
        all.push(&head);
        AdamState::new(&all, cfg.lr)
    };

    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        let (feats, cache) = net.forward_cached(x)?;
        let pred = head.forward(feats.view());
        let (loss, grad_pred) = mse_and_grad(&pred, y);
        losses.push(loss);

        let head_grad = DenseGrad {
            weights: feats.t().dot(&grad_pred),
            bias: grad_pred.sum_axis(Axis(0)),
        };
        let grad_feats = grad_pred.dot(&head.weights.t());
        let mut grads = net.backward(&cache, grad_feats.view());
        grads.push(head_grad);

        let mut params: Vec<&mut Dense> = net.layers.iter_mut().collect();
        params.push(&mut head);
        adam.update(&mut params, &grads);
    }
    let feats = net.forward_batch(x)?;
    let (loss, _) = mse_and_grad(&head.forward(feats.view()), y);
    losses.push(loss);
    if losses.iter().any(|l| !l.is_finite()) || !net.layers.iter().all(Dense::is_finite) {
        return Err(Error::NonFinite("feature stage training"));
    }
    Ok(FeatureStageOutput { net, head, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg(dims: Vec<usize>, epochs: usize, seed: u64) -> FeatureStageConfig {
        FeatureStageConfig {
            dims,
            lr: 1e-3,
            epochs,
            seed,
            activation: Activation::Relu,
        }
    }

    #[test]
    fn zero_net_maps_to_zero() {
        let net = FeatureNet::from_layers(vec![Dense::zeros(4, 8), Dense::zeros(8, 3)], Activation::Relu).unwrap();
        let out = net.forward(array![1.0, -2.0, 3.0, 0.5].view()).unwrap();
        assert_eq!(out.to_vec(), vec![0.0; 3]);
    }

    #[test]
    fn identity_layer_returns_input() {
        let layer = Dense {
            weights: Array2::eye(3),
            bias: Array1::zeros(3),
        };
        let net = FeatureNet::from_layers(vec![layer], Activation::Relu).unwrap();
        let x = array![-1.5, 0.0, 2.25];
        assert_eq!(net.forward(x.view()).unwrap(), x);
    }

    #[test]
    fn dimension_mismatch() {
        let net = FeatureNet::init(&[4, 5, 2], Activation::Relu, 0).unwrap();
        assert!(matches!(net.forward(array![1.0, 2.0].view()), Err(Error::Shape(_))));
        assert!(FeatureNet::from_layers(vec![Dense::zeros(2, 3), Dense::zeros(4, 1)], Activation::Relu).is_err());
    }

    #[test]
    fn insufficient_data() {
        let x = Array2::<f64>::ones((1, 4));
        let y = array![1.0];
        assert!(matches!(
            train_feature_stage(x.view(), y.view(), &cfg(vec![4, 8, 2], 5, 0)),
            Err(Error::InsufficientData { needed: 2, have: 1 })
        ));
    }

    #[test]
    fn constant_targets_are_fit() {
        let mut r = rng::stream(3);
        let x = Array2::from_shape_simple_fn((10, 8), || r.random_range(-1.0..1.0));
        let y = Array1::zeros(10);
        let out = train_feature_stage(x.view(), y.view(), &cfg(vec![8, 256, 256, 256, 20], 100, 11)).unwrap();
        let last = *out.losses.last().unwrap();
        assert!(last <= 1e-4, "final loss {last}");
        assert!(last <= out.losses[0]);
    }

    #[test]
    fn single_repeated_input_is_interpolated() {
        let x = Array2::from_shape_fn((6, 4), |(_, j)| j as f64 * 0.3 - 0.4);
        let y = Array1::from_elem(6, 0.7);
        let mut c = cfg(vec![4, 32, 8], 400, 5);
        c.lr = 1e-2;
        let out = train_feature_stage(x.view(), y.view(), &c).unwrap();
        assert!(*out.losses.last().unwrap() < 1e-6, "{:?}", out.losses.last());
    }

    #[test]
    fn training_is_reproducible() {
        let mut r = rng::stream(9);
        let x = Array2::from_shape_simple_fn((12, 6), || r.random_range(-2.0..2.0));
        let y = Array1::from_shape_simple_fn(12, || r.random_range(-1.0..1.0));
        let a = train_feature_stage(x.view(), y.view(), &cfg(vec![6, 16, 16, 4], 30, 1)).unwrap();
        let b = train_feature_stage(x.view(), y.view(), &cfg(vec![6, 16, 16, 4], 30, 1)).unwrap();
        assert!(a.losses.iter().all(|l| l.is_finite()));
        assert_eq!(
            a.losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>(),
            b.losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.net, b.net);
        assert!(a.losses.last().unwrap() <= &a.losses[0]);
    }
}
