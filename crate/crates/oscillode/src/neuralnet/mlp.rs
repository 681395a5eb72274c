//! Dense multilayer perceptron: affine layers with tanh on hidden layers
//! and identity on the output, plus exact reverse-mode gradients with
//! respect to parameters and inputs.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Row-major `out x in` weight matrix with a bias vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weights: vec![0.0; rows * cols],
            biases: vec![0.0; rows],
            rows,
            cols,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.biases.clone();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            out[r] += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Per-layer activations cached by a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// inputs[l] is the input fed to layer l (post-activation of l-1).
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Same shape as the parameters; produced by backward passes and consumed
/// by the optimizer.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in self.layers.iter_mut() {
            for x in l.weights.iter_mut() {
                *x *= s;
            }
            for x in l.biases.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flat_params(&self.layers)
    }
}

fn flat_params(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.biases);
    }
    out
}

impl Mlp {
    /// Seeded initialization, uniform in +-1/sqrt(fan-in) per layer.
    pub fn init<R: Rng>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let bound = 1.0 / (cols as f64).sqrt();
                Layer {
                    weights: (0..rows * cols)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect(),
                    biases: (0..rows).map(|_| rng.gen_range(-bound..bound)).collect(),
                    rows,
                    cols,
                }
            })
            .collect();
        Self {
            widths: widths.to_vec(),
            layers,
        }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Layer::zeros(w[1], w[0]))
            .collect();
        Self {
            widths: widths.to_vec(),
            layers,
        }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.rows * (l.cols + 1)).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flat_params(&self.layers)
    }

    pub fn from_flat(widths: &[usize], flat: &[f64]) -> Result<Self> {
        let mut net = Self::zeros(widths);
        if flat.len() != net.num_params() {
            return Err(Error::DimensionMismatch {
                expected: net.num_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for l in net.layers.iter_mut() {
            let nw = l.rows * l.cols;
            l.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            l.biases.copy_from_slice(&flat[offset..offset + l.rows]);
            offset += l.rows;
        }
        Ok(net)
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for l in self.layers.iter_mut() {
            let nw = l.rows * l.cols;
            l.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            l.biases.copy_from_slice(&flat[offset..offset + l.rows]);
            offset += l.rows;
        }
    }

    /// Affine-tanh-...-affine composition.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.output)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<MlpTrace> {
        if x.len() != self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.input_width(),
                got: x.len(),
            });
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(current.clone());
            current = layer.apply(&current);
            if i + 1 < n {
                for v in current.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
        Ok(MlpTrace {
            inputs,
            output: current,
        })
    }

    /// Reverse-mode gradients of `upstream . output` with respect to all
    /// parameters and the input.
    pub fn backward(&self, trace: &MlpTrace, upstream: &[f64]) -> (MlpGrads, Vec<f64>) {
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                // tanh' = 1 - tanh^2; the stored input of layer i+1 is
                // exactly the tanh output of layer i
                let act = &trace.inputs[i + 1];
                for (d, a) in delta.iter_mut().zip(act) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &trace.inputs[i];
            let g = &mut grads.layers[i];
            for r in 0..layer.rows {
                g.biases[r] += delta[r];
                for c in 0..layer.cols {
                    g.weights[r * layer.cols + c] += delta[r] * input[c];
                }
            }
            let mut next = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for c in 0..layer.cols {
                    next[c] += row[c] * delta[r];
                }
            }
            delta = next;
        }
        (grads, delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_zero_output() {
        let net = Mlp::zeros(&[3, 8, 2]);
        assert_eq!(net.forward(&[0.4, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn one_one_one_is_tanh() {
        let mut net = Mlp::zeros(&[1, 1, 1]);
        net.layers[0].weights[0] = 1.0;
        net.layers[1].weights[0] = 1.0;
        let y = net.forward(&[0.7]).unwrap();
        assert_eq!(y[0], 0.7f64.tanh());
    }

    #[test]
    fn deterministic_under_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let n1 = Mlp::init(&[4, 16, 16, 2], &mut a);
        let n2 = Mlp::init(&[4, 16, 16, 2], &mut b);
        let x = [0.1, -0.2, 0.3, 0.4];
        assert_eq!(n1.forward(&x).unwrap(), n2.forward(&x).unwrap());
        let t1 = n1.forward_trace(&x).unwrap();
        let t2 = n2.forward_trace(&x).unwrap();
        let (g1, i1) = n1.backward(&t1, &[1.0, -1.0]);
        let (g2, i2) = n2.backward(&t2, &[1.0, -1.0]);
        assert_eq!(g1.to_flat(), g2.to_flat());
        assert_eq!(i1, i2);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = Mlp::zeros(&[3, 4, 2]);
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init(&[2, 8, 2], &mut rng);
        let trace = net.forward_trace(&[0.3, 0.4]).unwrap();
        let (grads, input_grad) = net.backward(&trace, &[0.0, 0.0]);
        assert!(grads.to_flat().iter().all(|g| *g == 0.0));
        assert!(input_grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn linear_net_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::init(&[3, 2], &mut rng);
        let x = [0.5, -1.5, 2.0];
        let upstream = [2.0, -3.0];
        let trace = net.forward_trace(&x).unwrap();
        let (grads, _) = net.backward(&trace, &upstream);
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(grads.layers[0].weights[r * 3 + c], upstream[r] * x[c]);
            }
            assert_eq!(grads.layers[0].biases[r], upstream[r]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let net = Mlp::init(&[4, 10, 10, 2], &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let upstream: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let trace = net.forward_trace(&x).unwrap();
            let (grads, input_grad) = net.backward(&trace, &upstream);
            let flat_grads = grads.to_flat();

            let scalar = |net: &Mlp, x: &[f64]| -> f64 {
                net.forward(x)
                    .unwrap()
                    .iter()
                    .zip(&upstream)
                    .map(|(o, u)| o * u)
                    .sum()
            };

            let eta = 1e-6;
            let flat = net.to_flat();
            for idx in (0..flat.len()).step_by(17) {
                let mut fp = flat.clone();
                let mut fm = flat.clone();
                fp[idx] += eta;
                fm[idx] -= eta;
                let np = Mlp::from_flat(&net.widths, &fp).unwrap();
                let nm = Mlp::from_flat(&net.widths, &fm).unwrap();
                let fd = (scalar(&np, &x) - scalar(&nm, &x)) / (2.0 * eta);
                let denom = fd.abs().max(flat_grads[idx].abs()).max(1e-8);
                assert!(
                    ((flat_grads[idx] - fd) / denom).abs() < 1e-5,
                    "param {idx}: reverse {} vs fd {fd}",
                    flat_grads[idx]
                );
            }
            for j in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += eta;
                xm[j] -= eta;
                let fd = (scalar(&net, &xp) - scalar(&net, &xm)) / (2.0 * eta);
                let denom = fd.abs().max(input_grad[j].abs()).max(1e-8);
                assert!(((input_grad[j] - fd) / denom).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::init(&[5, 12, 3], &mut rng);
        let flat = net.to_flat();
        assert_eq!(flat.len(), net.num_params());
        let back = Mlp::from_flat(&net.widths, &flat).unwrap();
        assert_eq!(back.to_flat(), flat);
    }
}
