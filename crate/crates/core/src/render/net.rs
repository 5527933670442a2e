//! Shallow view-dependent color network.
//!
//! Input: interpolated feature `f`, raw world position `x`, and the view
//! direction with its sinusoidal encoding `[d, sin(2^k d), cos(2^k d)]` for
//! `k < pe_freqs`. Hidden layers are fully connected with ReLU; the output is
//! three color logits (the caller applies the sigmoid).
//!
//! Parameters are one flat vector. Each linear layer stores its weights
//! row-major as `[out][in]` followed by its `out` biases, layers in order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::num::{Real, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorNetConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub pe_freqs: usize,
}

impl Default for ColorNetConfig {
    fn default() -> Self {
        Self {
            feature_dim: 12,
            hidden: 64,
            hidden_layers: 2,
            pe_freqs: 4,
        }
    }
}

impl ColorNetConfig {
    pub fn input_dim(&self) -> usize {
        self.feature_dim + 3 + 3 * (1 + 2 * self.pe_freqs)
    }

    /// `(fan_in, fan_out)` of each linear layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim();
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden));
            fan_in = self.hidden;
        }
        dims.push((fan_in, 3));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 {
            return invalid("color network needs nonzero feature and hidden widths");
        }
        Ok(())
    }
}

#[inline]
fn affine<T: Real>(row: &[T], bias: T, x: &[T]) -> T {
    let mut acc = bias;
    for (wi, xi) in row.iter().zip(x) {
        acc += *wi * *xi;
    }
    acc
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColorNet<T> {
    config: ColorNetConfig,
    params: Vec<T>,
    dims: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

fn layout(config: &ColorNetConfig) -> (Vec<(usize, usize)>, Vec<usize>) {
    let dims = config.layer_dims();
    let mut offsets = Vec::with_capacity(dims.len());
    let mut off = 0;
    for &(i, o) in &dims {
        offsets.push(off);
        off += i * o + o;
    }
    (dims, offsets)
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct NetScratch<T> {
    input: Vec<T>,
    /// Post-ReLU output of each hidden layer.
    hidden: Vec<Vec<T>>,
    grad_a: Vec<T>,
    grad_b: Vec<T>,
}

impl<T: Real> ColorNet<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(config: ColorNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::with_capacity(config.num_params());
        for (fan_in, fan_out) in config.layer_dims() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(T::of(rng.gen_range(-bound..bound)));
            }
            params.extend(std::iter::repeat(T::zero()).take(fan_out));
        }
        let (dims, offsets) = layout(&config);
        Ok(Self { config, params, dims, offsets })
    }

    pub fn from_params(config: ColorNetConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.num_params() {
            return invalid(format!(
                "color network expects {} parameters, got {}",
                config.num_params(),
                params.len()
            ));
        }
        let (dims, offsets) = layout(&config);
        Ok(Self { config, params, dims, offsets })
    }

    pub fn config(&self) -> &ColorNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn scratch(&self) -> NetScratch<T> {
        NetScratch {
            input: vec![T::zero(); self.config.input_dim()],
            hidden: vec![vec![T::zero(); self.config.hidden]; self.config.hidden_layers],
            grad_a: Vec::new(),
            grad_b: Vec::new(),
        }
    }

    /// Zeroes the first-layer weights reading the view direction and its
    /// encoding, which removes all view dependence.
    pub fn zero_direction_weights(&mut self) {
        let (fan_in, fan_out) = self.dims[0];
        let dir_start = self.config.feature_dim + 3;
        for o in 0..fan_out {
            for i in dir_start..fan_in {
                self.params[o * fan_in + i] = T::zero();
            }
        }
    }

    fn fill_input(&self, feature: &[T], x: Vec3<T>, d: Vec3<T>, input: &mut Vec<T>) {
        input.clear();
        input.extend_from_slice(&feature[..self.config.feature_dim]);
        input.extend_from_slice(&x);
        input.extend_from_slice(&d);
        let mut freq = T::one();
        for _ in 0..self.config.pe_freqs {
            for a in 0..3 {
                input.push((d[a] * freq).sin());
            }
            for a in 0..3 {
                input.push((d[a] * freq).cos());
            }
            freq = freq + freq;
        }
    }

    /// Color logits; activations are kept in `scratch` for [`Self::backward`].
    pub fn forward(&self, feature: &[T], x: Vec3<T>, d: Vec3<T>, scratch: &mut NetScratch<T>) -> [T; 3] {
        let mut input = std::mem::take(&mut scratch.input);
        self.fill_input(feature, x, d, &mut input);
        let n_layers = self.dims.len();
        let mut out = [T::zero(); 3];
        for (layer, &(fan_in, fan_out)) in self.dims.iter().enumerate() {
            let off = self.offsets[layer];
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let (prev, rest) = scratch.hidden.split_at_mut(layer.min(n_layers - 1));
            let src: &[T] = if layer == 0 { &input } else { &prev[layer - 1] };
            if layer == n_layers - 1 {
                for (o, out_o) in out.iter_mut().enumerate() {
                    *out_o = affine(&w[o * fan_in..(o + 1) * fan_in], b[o], src);
                }
            } else {
                let dst = &mut rest[0];
                dst.resize(fan_out, T::zero());
                for (o, d) in dst.iter_mut().enumerate() {
                    *d = affine(&w[o * fan_in..(o + 1) * fan_in], b[o], src).max(T::zero());
                }
            }
        }
        scratch.input = input;
        out
    }

    /// Backpropagates `d_logits` through the pass recorded in `scratch`.
    /// Parameter gradients are added to `grad_params`; the gradient with
    /// respect to the feature input is added to `d_feature`.
    pub fn backward(
        &self,
        scratch: &mut NetScratch<T>,
        d_logits: [T; 3],
        grad_params: &mut [T],
        d_feature: &mut [T],
    ) {
        let dims = &self.dims;
        let mut upstream = std::mem::take(&mut scratch.grad_a);
        let mut below = std::mem::take(&mut scratch.grad_b);
        upstream.clear();
        upstream.extend_from_slice(&d_logits);
        for layer in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[layer];
            let off = self.offsets[layer];
            let src: &[T] = if layer == 0 { &scratch.input } else { &scratch.hidden[layer - 1] };
            let w = &self.params[off..off + fan_in * fan_out];
            below.clear();
            below.resize(fan_in, T::zero());
            for o in 0..fan_out {
                let g = upstream[o];
                if g == T::zero() {
                    continue;
                }
                grad_params[off + fan_in * fan_out + o] += g;
                let gw = &mut grad_params[off + o * fan_in..off + (o + 1) * fan_in];
                for (gwi, xi) in gw.iter_mut().zip(src) {
                    *gwi += g * *xi;
                }
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (bi, wi) in below.iter_mut().zip(row) {
                    *bi += g * *wi;
                }
            }
            if layer > 0 {
                // ReLU gate of the layer below.
                for (bi, hi) in below.iter_mut().zip(&scratch.hidden[layer - 1]) {
                    if *hi <= T::zero() {
                        *bi = T::zero();
                    }
                }
            }
            std::mem::swap(&mut upstream, &mut below);
        }
        for (df, g) in d_feature.iter_mut().zip(&upstream[..self.config.feature_dim]) {
            *df += *g;
        }
        scratch.grad_a = upstream;
        scratch.grad_b = below;
    }

    pub fn cast<U: Real>(&self) -> ColorNet<U> {
        ColorNet {
            config: self.config,
            params: self.params.iter().map(|v| U::of(v.as_f64())).collect(),
            dims: self.dims.clone(),
            offsets: self.offsets.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ColorNetConfig {
        ColorNetConfig {
            feature_dim: 3,
            hidden: 5,
            hidden_layers: 2,
            pe_freqs: 2,
        }
    }

    #[test]
    fn parameter_count() {
        let c = ColorNetConfig::default();
        assert_eq!(c.input_dim(), 12 + 3 + 27);
        assert_eq!(c.num_params(), 42 * 64 + 64 + 64 * 64 + 64 + 64 * 3 + 3);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = ColorNet::<f64>::init(small(), &mut rng).unwrap();
        // Nonzero biases so ReLU gates differ between units.
        for p in net.params_mut().iter_mut() {
            *p += 0.05;
        }
        let f = [0.3, -0.8, 0.5];
        let x = [0.1, 0.2, -0.3];
        let d = crate::num::normalize([0.3, -0.2, -0.9]);
        let up = [0.7, -1.1, 0.4];
        let objective = |net: &ColorNet<f64>, f: &[f64]| {
            let mut s = net.scratch();
            let o = net.forward(f, x, d, &mut s);
            o[0] * up[0] + o[1] * up[1] + o[2] * up[2]
        };
        let mut s = net.scratch();
        net.forward(&f, x, d, &mut s);
        let mut gp = vec![0.0; net.params().len()];
        let mut gf = vec![0.0; 3];
        net.backward(&mut s, up, &mut gp, &mut gf);
        let h = 1e-6;
        for i in 0..gp.len() {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let fp = objective(&p, &f);
            p.params_mut()[i] -= 2.0 * h;
            let fm = objective(&p, &f);
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - gp[i]).abs() < 1e-7, "param {i}: {fd} vs {}", gp[i]);
        }
        for i in 0..3 {
            let mut fp = f;
            fp[i] += h;
            let mut fm = f;
            fm[i] -= h;
            let fd = (objective(&net, &fp) - objective(&net, &fm)) / (2.0 * h);
            assert!((fd - gf[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn zeroed_direction_path_ignores_view() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = ColorNet::<f64>::init(small(), &mut rng).unwrap();
        net.zero_direction_weights();
        let mut s = net.scratch();
        let a = net.forward(&[0.1, 0.2, 0.3], [0.0; 3], [0.0, 0.0, -1.0], &mut s);
        let b = net.forward(&[0.1, 0.2, 0.3], [0.0; 3], [0.6, 0.8, 0.0], &mut s);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_wrong_param_count() {
        assert!(ColorNet::<f32>::from_params(small(), vec![0.0; 3]).is_err());
    }
}
