//! Dense feed-forward networks with explicit forward/backward passes.
//!
//! Parameters live in flat row-major matrices (`out_dim * in_dim` per layer)
//! so the hot loops are plain slice arithmetic. Gradients are produced by
//! hand-written backpropagation and validated against central finite
//! differences via [`grad_check`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Elementwise nonlinearity. Hidden layers use `Tanh`, the output layer is
/// always `Identity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y = f(z)`.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Dot product with four explicit accumulators. The summation order is part
/// of the contract: it is fixed by this code, not by compiler flags, so
/// results are reproducible across platforms.
#[inline]
fn dot_unrolled(a: &[f64], b: &[f64]) -> f64 {
    let n4 = a.len() - a.len() % 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (ca, cb) in a[..n4].chunks_exact(4).zip(b[..n4].chunks_exact(4)) {
        s0 += ca[0] * cb[0];
        s1 += ca[1] * cb[1];
        s2 += ca[2] * cb[2];
        s3 += ca[3] * cb[3];
    }
    let mut t = (s0 + s1) + (s2 + s3);
    for i in n4..a.len() {
        t += a[i] * b[i];
    }
    t
}

/// Multilayer perceptron with tanh hidden layers and an identity output.
///
/// `layer_sizes` includes the input width, so a `[4, 64, 2]` net has one
/// hidden layer. Weights are Xavier-uniform from the stored seed, biases
/// start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    layer_sizes: Vec<usize>,
    /// Per layer, flat row-major: `weights[l][o * in + i]`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    hidden_activation: Activation,
    output_activation: Activation,
    rng_seed: u64,
}

impl MlpNet {
    /// Builds a net with Xavier-uniform weights (`limit = sqrt(6 / (fan_in +
    /// fan_out))`) drawn from a stream seeded by `seed`, and zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Invalid(format!(
                "a net needs an input and an output layer, got {} sizes",
                layer_sizes.len()
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Invalid("zero-width layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for l in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpNet {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
            rng_seed: seed,
        })
    }

    /// Rebuilds a net from explicit parameters (checkpoint loading).
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut net = MlpNet::new(&layer_sizes, 0)?;
        if weights.len() != net.weights.len() || biases.len() != net.biases.len() {
            return Err(Error::shape(
                "from_parts layer count",
                net.weights.len(),
                weights.len(),
            ));
        }
        for l in 0..weights.len() {
            if weights[l].len() != net.weights[l].len() {
                return Err(Error::shape(
                    format!("from_parts weights layer {l}"),
                    net.weights[l].len(),
                    weights[l].len(),
                ));
            }
            if biases[l].len() != net.biases[l].len() {
                return Err(Error::shape(
                    format!("from_parts biases layer {l}"),
                    net.biases[l].len(),
                    biases[l].len(),
                ));
            }
        }
        net.weights = weights;
        net.biases = biases;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn in_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    /// Swaps the output nonlinearity (the default is identity). An encoder
    /// whose output is itself a hidden layer of a larger composite uses
    /// tanh here.
    pub fn set_output_activation(&mut self, act: Activation) {
        self.output_activation = act;
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::shape("forward input", self.in_dim(), x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFault("non-finite network input".into()));
        }
        Ok(())
    }

    fn activation_for_layer(&self, l: usize) -> Activation {
        if l + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Forward pass. Depends only on parameters and input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for l in 0..self.num_layers() {
            let act = self.activation_for_layer(l);
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let z = self.biases[l][o] + dot_unrolled(&self.weights[l][o * n_in..(o + 1) * n_in], &cur);
                out.push(act.apply(z));
            }
            cur = out;
        }
        Ok(cur)
    }

    /// Forward pass keeping every layer's post-activation values, index 0
    /// being the input itself. Feeds [`MlpNet::backward_from_acts`].
    pub fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.num_layers() + 1);
        acts.push(x.to_vec());
        for l in 0..self.num_layers() {
            let act = self.activation_for_layer(l);
            let input = acts.last().unwrap();
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let z = self.biases[l][o] + dot_unrolled(&self.weights[l][o * n_in..(o + 1) * n_in], input);
                out.push(act.apply(z));
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Backpropagates `upstream` (gradient of some scalar loss with respect
    /// to the network output) through a stored forward trace, accumulating
    /// parameter gradients into `grads` and returning the input gradient.
    pub fn backward_from_acts(
        &self,
        acts: &[Vec<f64>],
        upstream: &[f64],
        grads: &mut GradientSet,
    ) -> Result<Vec<f64>> {
        if acts.len() != self.num_layers() + 1 {
            return Err(Error::shape(
                "backward trace length",
                self.num_layers() + 1,
                acts.len(),
            ));
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::shape("backward upstream", self.out_dim(), upstream.len()));
        }
        grads.check_congruent(self)?;
        let mut delta: Vec<f64> = Vec::new();
        for l in (0..self.num_layers()).rev() {
            let act = self.activation_for_layer(l);
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let out = &acts[l + 1];
            let inp = &acts[l];
            // dL/dz for this layer, via the activation derivative.
            let mut dz = Vec::with_capacity(n_out);
            let source: &[f64] = if l + 1 == self.num_layers() {
                upstream
            } else {
                &delta
            };
            for o in 0..n_out {
                dz.push(source[o] * act.grad_from_output(out[o]));
            }
            let mut dx = vec![0.0; n_in];
            for o in 0..n_out {
                let g = dz[o];
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                let grow = &mut grads.weights[l][o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += g * inp[i];
                    dx[i] += g * row[i];
                }
                grads.biases[l][o] += g;
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Convenience single-sample backward: runs the forward pass itself.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(GradientSet, Vec<f64>)> {
        let acts = self.activations(x)?;
        let mut grads = GradientSet::zeros_like(self);
        let dx = self.backward_from_acts(&acts, upstream, &mut grads)?;
        Ok((grads, dx))
    }

    /// Directional derivative of the output along a parameter direction
    /// (forward-mode pass). `direction` views the flat parameter vector in
    /// [`MlpNet::flat_params`] order; `acts` comes from
    /// [`MlpNet::activations`] at the current parameters.
    pub fn output_jvp(&self, acts: &[Vec<f64>], direction: &[f64]) -> Result<Vec<f64>> {
        if direction.len() != self.param_count() {
            return Err(Error::shape("jvp direction", self.param_count(), direction.len()));
        }
        if acts.len() != self.num_layers() + 1 {
            return Err(Error::shape("jvp trace length", self.num_layers() + 1, acts.len()));
        }
        let mut r = vec![0.0; self.in_dim()];
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let act = self.activation_for_layer(l);
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let dw = &direction[offset..offset + n_in * n_out];
            offset += n_in * n_out;
            let db = &direction[offset..offset + n_out];
            offset += n_out;
            let inp = &acts[l];
            let out = &acts[l + 1];
            let mut rz = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let wrow = &self.weights[l][o * n_in..(o + 1) * n_in];
                let drow = &dw[o * n_in..(o + 1) * n_in];
                // d(z_o) = W_row . d(x) + dW_row . x + db_o
                let v = db[o] + dot_unrolled(wrow, &r) + dot_unrolled(drow, inp);
                rz.push(v * act.grad_from_output(out[o]));
            }
            r = rz;
        }
        Ok(r)
    }

    /// Clamps every weight and bias into `[lo, hi]`. Idempotent.
    pub fn clip_params(&mut self, lo: f64, hi: f64) {
        debug_assert!(lo <= hi);
        for layer in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for p in layer.iter_mut() {
                *p = p.clamp(lo, hi);
            }
        }
    }

    pub fn max_abs_param(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flat_map(|l| l.iter())
            .fold(0.0f64, |m, &p| m.max(p.abs()))
    }

    /// Flat parameter vector, per layer weights then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.num_layers() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("flat params", self.param_count(), flat.len()));
        }
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let nw = self.weights[l].len();
            self.weights[l].copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = self.biases[l].len();
            self.biases[l].copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn fill_params(&mut self, w: f64, b: f64) {
        for layer in self.weights.iter_mut() {
            layer.iter_mut().for_each(|p| *p = w);
        }
        for layer in self.biases.iter_mut() {
            layer.iter_mut().for_each(|p| *p = b);
        }
    }
}

/// Parameter gradients, shape-congruent with one [`MlpNet`].
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &MlpNet) -> Self {
        GradientSet {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            l.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn check_congruent(&self, net: &MlpNet) -> Result<()> {
        if self.weights.len() != net.weights.len() {
            return Err(Error::shape("gradient layers", net.weights.len(), self.weights.len()));
        }
        for l in 0..self.weights.len() {
            if self.weights[l].len() != net.weights[l].len() {
                return Err(Error::shape(
                    format!("gradient weights layer {l}"),
                    net.weights[l].len(),
                    self.weights[l].len(),
                ));
            }
            if self.biases[l].len() != net.biases[l].len() {
                return Err(Error::shape(
                    format!("gradient biases layer {l}"),
                    net.biases[l].len(),
                    self.biases[l].len(),
                ));
            }
        }
        Ok(())
    }

    /// Accumulates `other` scaled by `c`. Shapes are checked on every call.
    pub fn add_scaled(&mut self, other: &GradientSet, c: f64) -> Result<()> {
        if self.weights.len() != other.weights.len() {
            return Err(Error::shape("accumulate layers", self.weights.len(), other.weights.len()));
        }
        for l in 0..self.weights.len() {
            if self.weights[l].len() != other.weights[l].len()
                || self.biases[l].len() != other.biases[l].len()
            {
                return Err(Error::shape(
                    format!("accumulate layer {l}"),
                    self.weights[l].len(),
                    other.weights[l].len(),
                ));
            }
            for (g, o) in self.weights[l].iter_mut().zip(&other.weights[l]) {
                *g += c * *o;
            }
            for (g, o) in self.biases[l].iter_mut().zip(&other.biases[l]) {
                *g += c * *o;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for l in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            l.iter_mut().for_each(|g| *g *= c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|l| l.iter().all(|g| g.is_finite()))
    }

    /// Flat gradient vector matching [`MlpNet::flat_params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }
}

/// First-order optimizer state bound to one network's shapes.
#[derive(Debug, Clone)]
pub enum OptMethod {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    method: OptMethod,
    lr: f64,
    step_count: u64,
    m: GradientSet,
    v: GradientSet,
}

impl OptimizerState {
    pub fn sgd(lr: f64, net: &MlpNet) -> Self {
        OptimizerState {
            method: OptMethod::Sgd,
            lr,
            step_count: 0,
            m: GradientSet::zeros_like(net),
            v: GradientSet::zeros_like(net),
        }
    }

    /// Adam with the reference constants β1=0.9, β2=0.999, ε=1e-8.
    pub fn adam(lr: f64, net: &MlpNet) -> Self {
        OptimizerState {
            method: OptMethod::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr,
            step_count: 0,
            m: GradientSet::zeros_like(net),
            v: GradientSet::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }
}

/// Applies one descent step of `grads` to `net`. Non-finite gradients abort
/// with a numeric fault and leave the parameters untouched; nothing is ever
/// clamped silently.
pub fn optimizer_step(
    net: &mut MlpNet,
    state: &mut OptimizerState,
    grads: &GradientSet,
) -> Result<()> {
    grads.check_congruent(net)?;
    state.m.check_congruent(net)?;
    if !grads.is_finite() {
        return Err(Error::NumericFault("non-finite gradient in optimizer step".into()));
    }
    state.step_count += 1;
    match state.method {
        OptMethod::Sgd => {
            for l in 0..net.weights.len() {
                for (p, g) in net.weights[l].iter_mut().zip(&grads.weights[l]) {
                    *p -= state.lr * *g;
                }
                for (p, g) in net.biases[l].iter_mut().zip(&grads.biases[l]) {
                    *p -= state.lr * *g;
                }
            }
        }
        OptMethod::Adam { beta1, beta2, eps } => {
            let t = state.step_count as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    p[i] -= state.lr * m_hat / (v_hat.sqrt() + eps);
                }
            };
            for l in 0..net.weights.len() {
                apply(
                    &mut net.weights[l],
                    &grads.weights[l],
                    &mut state.m.weights[l],
                    &mut state.v.weights[l],
                );
                apply(
                    &mut net.biases[l],
                    &grads.biases[l],
                    &mut state.m.biases[l],
                    &mut state.v.biases[l],
                );
            }
        }
    }
    Ok(())
}

/// Checks analytic gradients against central finite differences using the
/// probe loss `L = sum(outputs)`. Returns the maximum relative error over
/// all parameters, with the symmetric denominator `max(1, |a| + |n|)`.
pub fn grad_check(net: &MlpNet, x: &[f64], eps: f64) -> Result<f64> {
    let acts = net.activations(x)?;
    let mut analytic = GradientSet::zeros_like(net);
    let ones = vec![1.0; net.out_dim()];
    net.backward_from_acts(&acts, &ones, &mut analytic)?;
    let flat_analytic = analytic.flatten();

    let mut probe = net.clone();
    let mut params = net.flat_params();
    let mut max_rel = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + eps;
        probe.set_flat_params(&params)?;
        let loss_plus: f64 = probe.forward(x)?.iter().sum();
        params[i] = orig - eps;
        probe.set_flat_params(&params)?;
        let loss_minus: f64 = probe.forward(x)?.iter().sum();
        params[i] = orig;
        let numeric = (loss_plus - loss_minus) / (2.0 * eps);
        let a = flat_analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
