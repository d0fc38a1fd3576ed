//! A tiny dense network with hand-written backprop and Adam.
//!
//! Hidden layers use tanh (1-Lipschitz); the output layer is linear.
//! Parameters live in one flat vector, layer by layer, each layer stored as
//! its row-major `out × in` weight matrix followed by its bias.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Post-activation values of every layer for one input, kept for backprop.
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// Gaussian init with variance 1/fan_in.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::arg(format!("bad layer sizes {layer_sizes:?}")));
        }
        let count: usize = layer_sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        let mut params = vec![0.0; count];
        let mut r = rng::rng(seed);
        let mut off = 0;
        for w in layer_sizes.windows(2) {
            let scale = 1.0 / (w[0] as f64).sqrt();
            for p in &mut params[off..off + w[0] * w[1]] {
                *p = scale * rng::normal(&mut r);
            }
            off += w[0] * w[1] + w[1];
        }
        Ok(Mlp { layer_sizes: layer_sizes.to_vec(), params })
    }

    pub fn from_parts(layer_sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let expected: usize = layer_sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        if layer_sizes.len() < 2 || params.len() != expected {
            return Err(Error::arg(format!(
                "layer sizes {layer_sizes:?} need {expected} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::arg("non-finite parameter"));
        }
        Ok(Mlp { layer_sizes, params })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }
    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }
    pub fn n_in(&self) -> usize {
        self.layer_sizes[0]
    }
    pub fn n_out(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offset(&self, layer: usize) -> usize {
        self.layer_sizes[..=layer].windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// (weights, bias) of a layer.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.offset(l);
        (&self.params[off..off + i * o], &self.params[off + i * o..off + i * o + o])
    }

    pub fn layer_weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.offset(l);
        &mut self.params[off..off + i * o]
    }

    /// Zero the output layer so the network starts as the zero map.
    pub fn zero_output(&mut self) {
        let l = self.n_layers() - 1;
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.offset(l);
        self.params[off..off + i * o + o].fill(0.0);
    }

    /// Sub-block of columns `cols` of layer `l`'s weight matrix.
    pub fn weight_matrix(&self, l: usize, cols: std::ops::Range<usize>) -> DMatrix<f64> {
        let (w, _) = self.layer(l);
        let n_in = self.layer_sizes[l];
        let rows = self.layer_sizes[l + 1];
        DMatrix::from_fn(rows, cols.len(), |r, c| w[r * n_in + cols.start + c])
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        let last = self.n_layers() - 1;
        let mut off = 0;
        for l in 0..self.n_layers() {
            let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.params[off..off + i * o];
            let b = &self.params[off + i * o..off + i * o + o];
            let mut next = b.to_vec();
            for (r, nv) in next.iter_mut().enumerate() {
                let row = &w[r * i..(r + 1) * i];
                *nv += row.iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>();
                if l != last {
                    *nv = nv.tanh();
                }
            }
            cur = next;
            off += i * o + o;
        }
        cur
    }

    pub fn forward_trace(&self, input: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(input.to_vec());
        let last = self.n_layers() - 1;
        let mut off = 0;
        for l in 0..self.n_layers() {
            let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.params[off..off + i * o];
            let b = &self.params[off + i * o..off + i * o + o];
            let cur = &acts[l];
            let next: Vec<f64> = (0..o)
                .map(|r| {
                    let z = b[r] + w[r * i..(r + 1) * i].iter().zip(cur).map(|(a, c)| a * c).sum::<f64>();
                    if l != last {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(next);
            off += i * o + o;
        }
        Trace { acts }
    }

    /// Accumulates ∂(grad_out · output)/∂params into `grads`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut delta = grad_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = self.offset(l);
            let a_prev = &trace.acts[l];
            for r in 0..o {
                let dr = delta[r];
                if dr != 0.0 {
                    let g = &mut grads[off + r * i..off + (r + 1) * i];
                    g.iter_mut().zip(a_prev).for_each(|(gv, a)| *gv += dr * a);
                }
                grads[off + i * o + r] += dr;
            }
            if l > 0 {
                let w = &self.params[off..off + i * o];
                let mut prev = vec![0.0; i];
                for r in 0..o {
                    let dr = delta[r];
                    if dr != 0.0 {
                        prev.iter_mut().zip(&w[r * i..(r + 1) * i]).for_each(|(p, wv)| *p += dr * wv);
                    }
                }
                prev.iter_mut().zip(a_prev).for_each(|(p, a)| *p *= 1.0 - a * a);
                delta = prev;
            }
        }
    }
}

/// Adam on a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

/// Largest singular value by power iteration on AᵀA, warm-started from `v`.
/// A lower bound on the true value that tightens with `iters`.
pub fn power_iteration(a: &DMatrix<f64>, v: &mut Vec<f64>, iters: usize) -> f64 {
    let n = a.ncols();
    if v.len() != n || v.iter().all(|x| *x == 0.0) {
        *v = vec![1.0 / (n as f64).sqrt(); n];
    }
    let mut x = nalgebra::DVector::from_column_slice(v);
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        let y = a * &x;
        let z = a.transpose() * &y;
        let nz = z.norm();
        if nz == 0.0 {
            return 0.0;
        }
        x = z / nz;
        sigma = (a * &x).norm();
    }
    v.copy_from_slice(x.as_slice());
    sigma
}

/// Exact largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = Mlp::new(&[3, 5, 4, 2], 1).unwrap();
        // non-zero biases
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            *p += 0.01 * (i as f64).sin();
        }
        let x = [0.3, -0.7, 1.1];
        let gout = [0.4, -1.3];
        let tr = net.forward_trace(&x);
        let mut g = vec![0.0; net.params().len()];
        net.backward(&tr, &gout, &mut g);
        let obj = |n: &Mlp| n.forward(&x).iter().zip(&gout).map(|(a, b)| a * b).sum::<f64>();
        for (k, gk) in g.iter().enumerate() {
            let h = 1e-6;
            let mut p = net.clone();
            p.params_mut()[k] += h;
            let mut q = net.clone();
            q.params_mut()[k] -= h;
            let fd = (obj(&p) - obj(&q)) / (2.0 * h);
            assert!((fd - gk).abs() < 1e-7 * (1.0 + fd.abs()), "param {k}: {fd} vs {gk}");
        }
        assert_eq!(tr.output(), net.forward(&x).as_slice());
    }

    #[test]
    fn zero_output_gives_zero_map() {
        let mut net = Mlp::new(&[2, 8, 1], 3).unwrap();
        net.zero_output();
        assert_eq!(net.forward(&[1.0, 2.0]), vec![0.0]);
    }

    #[test]
    fn power_iteration_lower_bounds_svd() {
        let net = Mlp::new(&[6, 9, 2], 4).unwrap();
        let a = net.weight_matrix(0, 0..6);
        let exact = spectral_norm(&a);
        let mut v = vec![];
        let est = power_iteration(&a, &mut v, 5);
        assert!(est <= exact * (1.0 + 1e-12));
        let est = power_iteration(&a, &mut v, 200);
        assert!((est - exact).abs() < 1e-6 * exact);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.update(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn json_schema_is_sizes_plus_flat_params() {
        let net = Mlp::new(&[2, 3, 1], 0).unwrap();
        let v = serde_json::to_value(&net).unwrap();
        assert_eq!(v["layer_sizes"], serde_json::json!([2, 3, 1]));
        assert_eq!(v["params"].as_array().unwrap().len(), 2 * 3 + 3 + 3 + 1);
        assert!(Mlp::from_parts(vec![2, 3, 1], vec![0.0; 5]).is_err());
    }
}
