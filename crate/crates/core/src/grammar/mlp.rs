//! Residual ReLU perceptron: an input projection followed by two residual
//! blocks `h + relu(W₂ relu(W₁ h + b₁) + b₂)`.

use super::{TensorMap, Tensor};

/// Borrowed view of one perceptron's weights inside a [`TensorMap`].
pub struct Mlp<'a> {
    dim: usize,
    weights: [&'a [f64]; 5],
    biases: [&'a [f64]; 5],
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    input: Vec<f64>,
    h0: Vec<f64>,
    pre: [Vec<f64>; 4],
    hidden: [Vec<f64>; 2],
    h1: Vec<f64>,
    pub output: Vec<f64>,
}

impl<'a> Mlp<'a> {
    pub fn tensor_shapes(prefix: &str, dim: usize) -> Vec<(String, Vec<usize>)> {
        (0..5)
            .flat_map(|i| {
                [
                    (format!("{prefix}.w{i}"), vec![dim, dim]),
                    (format!("{prefix}.b{i}"), vec![dim]),
                ]
            })
            .collect()
    }

    pub fn is_bias(name: &str) -> bool {
        name.starts_with("mlp.")
            && name
                .rsplit('.')
                .next()
                .is_some_and(|last| last.starts_with('b'))
    }

    pub fn new(tensors: &'a TensorMap, prefix: &str, dim: usize) -> Self {
        let get = |name: String| -> &'a [f64] {
            &tensors
                .get(&name)
                .unwrap_or_else(|| panic!("perceptron tensor {name} missing"))
                .data
        };
        Self {
            dim,
            weights: std::array::from_fn(|i| get(format!("{prefix}.w{i}"))),
            biases: std::array::from_fn(|i| get(format!("{prefix}.b{i}"))),
        }
    }

    fn affine(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let w = self.weights[layer];
        (0..d)
            .map(|i| {
                let row = &w[i * d..(i + 1) * d];
                self.biases[layer][i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> MlpTrace {
        let relu = |v: &[f64]| v.iter().map(|&z| z.max(0.0)).collect::<Vec<_>>();
        let h0 = self.affine(0, x);
        let p0 = self.affine(1, &h0);
        let s0 = relu(&p0);
        let p1 = self.affine(2, &s0);
        let h1: Vec<f64> = h0.iter().zip(&p1).map(|(h, p)| h + p.max(0.0)).collect();
        let p2 = self.affine(3, &h1);
        let s1 = relu(&p2);
        let p3 = self.affine(4, &s1);
        let output = h1.iter().zip(&p3).map(|(h, p)| h + p.max(0.0)).collect();
        MlpTrace {
            input: x.to_vec(),
            h0,
            pre: [p0, p1, p2, p3],
            hidden: [s0, s1],
            h1,
            output,
        }
    }

    /// Accumulates weight gradients into `grads` (keyed like the parameters)
    /// and returns the gradient with respect to the input.
    pub fn backward(
        &self,
        prefix: &str,
        trace: &MlpTrace,
        grad_out: &[f64],
        grads: &mut TensorMap,
    ) -> Vec<f64> {
        let gate = |g: &[f64], pre: &[f64]| -> Vec<f64> {
            g.iter()
                .zip(pre)
                .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
                .collect()
        };
        // second residual block
        let g_p3 = gate(grad_out, &trace.pre[3]);
        let g_s1 = self.linear_backward(prefix, 4, &trace.hidden[1], &g_p3, grads);
        let g_p2 = gate(&g_s1, &trace.pre[2]);
        let mut g_h1 = self.linear_backward(prefix, 3, &trace.h1, &g_p2, grads);
        add_into(&mut g_h1, grad_out);
        // first residual block
        let g_p1 = gate(&g_h1, &trace.pre[1]);
        let g_s0 = self.linear_backward(prefix, 2, &trace.hidden[0], &g_p1, grads);
        let g_p0 = gate(&g_s0, &trace.pre[0]);
        let mut g_h0 = self.linear_backward(prefix, 1, &trace.h0, &g_p0, grads);
        add_into(&mut g_h0, &g_h1);
        self.linear_backward(prefix, 0, &trace.input, &g_h0, grads)
    }

    fn linear_backward(
        &self,
        prefix: &str,
        layer: usize,
        input: &[f64],
        grad_y: &[f64],
        grads: &mut TensorMap,
    ) -> Vec<f64> {
        let d = self.dim;
        let w = self.weights[layer];
        {
            let gw = grad_tensor(grads, &format!("{prefix}.w{layer}"));
            for i in 0..d {
                if grad_y[i] == 0.0 {
                    continue;
                }
                for j in 0..d {
                    gw.data[i * d + j] += grad_y[i] * input[j];
                }
            }
        }
        add_into(&mut grad_tensor(grads, &format!("{prefix}.b{layer}")).data, grad_y);
        let mut gx = vec![0.0; d];
        for i in 0..d {
            if grad_y[i] == 0.0 {
                continue;
            }
            let row = &w[i * d..(i + 1) * d];
            for j in 0..d {
                gx[j] += row[j] * grad_y[i];
            }
        }
        gx
    }

    /// Sign pattern of every ReLU pre-activation, for detecting kinks.
    pub fn relu_signature(trace: &MlpTrace) -> impl Iterator<Item = bool> + '_ {
        trace.pre.iter().flat_map(|p| p.iter().map(|&z| z > 0.0))
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn grad_tensor<'g>(grads: &'g mut TensorMap, name: &str) -> &'g mut Tensor {
    grads
        .get_mut(name)
        .unwrap_or_else(|| panic!("gradient tensor {name} missing"))
}
