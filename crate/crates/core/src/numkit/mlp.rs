use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use super::Rng;
use crate::error::{ensure_len, Error, Result};

/// Activation applied to the final layer. Hidden layers always use the rectifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OutputActivation {
    Identity,
    /// `bound * tanh(z)`.
    ScaledTanh { bound: f64 },
}

impl OutputActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => z,
            OutputActivation::ScaledTanh { bound } => bound * z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::ScaledTanh { bound } => {
                let t = z.tanh();
                bound * (1.0 - t * t)
            }
        }
    }
}

/// Dense multilayer perceptron with rectifier hidden layers.
///
/// Parameters live in one flat buffer. Layer `k` occupies a row-major
/// `out × in` weight block followed by its `out` biases, so the buffer is
/// directly usable by [`super::AdamState`], [`super::polyak_update`] and the
/// checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    sizes: Vec<usize>,
    params: Vec<f64>,
    output: OutputActivation,
}

/// Intermediate values of a batched forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `inputs[k]` feeds layer `k`; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// Parameter gradient (flat, same layout as [`MlpNet::params`]) plus the
/// gradient with respect to the batch input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Array2<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl MlpNet {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn new(sizes: &[usize], output: OutputActivation, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.uniform_range(-limit, limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        let n = Self::validate_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
            output,
        })
    }

    pub fn from_params(sizes: &[usize], output: OutputActivation, params: Vec<f64>) -> Result<Self> {
        let n = Self::validate_sizes(sizes)?;
        ensure_len("mlp parameters", n, params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("mlp parameters".into()));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
            output,
        })
    }

    fn validate_sizes(sizes: &[usize]) -> Result<usize> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "an mlp needs at least an input and an output size".into(),
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        Ok(param_count(sizes))
    }

    /// Input, hidden and output sizes in order.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offset(&self, k: usize) -> usize {
        param_count(&self.sizes[..=k])
    }

    /// Weight (`out × in`) and bias views of layer `k`.
    pub fn layer(&self, k: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
        let off = self.layer_offset(k);
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[off..off + fan_in * fan_out])
            .expect("layer block is contiguous");
        let b = ArrayView1::from(&self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out]);
        (w, b)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_len("mlp input", self.input_dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mlp input".into()));
        }
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass over a batch with one sample per row.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        ensure_len("mlp batch input", self.input_dim(), x.ncols())?;
        let last = self.num_layers() - 1;
        let mut a = x.to_owned();
        for k in 0..=last {
            let (w, b) = self.layer(k);
            let mut z = a.dot(&w.t());
            z += &b;
            if k == last {
                let head = self.output;
                z.mapv_inplace(|v| head.apply(v));
            } else {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    /// Forward pass that records what [`MlpNet::backward`] needs.
    pub fn forward_tape(&self, x: ArrayView2<'_, f64>) -> Result<Tape> {
        ensure_len("mlp batch input", self.input_dim(), x.ncols())?;
        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(last + 1);
        let mut pre = Vec::with_capacity(last + 1);
        inputs.push(x.to_owned());
        for k in 0..=last {
            let (w, b) = self.layer(k);
            let mut z = inputs[k].dot(&w.t());
            z += &b;
            let a = if k == last {
                let head = self.output;
                z.mapv(|v| head.apply(v))
            } else {
                z.mapv(|v| v.max(0.0))
            };
            pre.push(z);
            if k == last {
                return Ok(Tape { inputs, pre, output: a });
            }
            inputs.push(a);
        }
        unreachable!("loop returns on the last layer")
    }

    /// Exact gradient of `Σ_rows ⟨upstream_row, output_row⟩` with respect to
    /// every parameter and every input entry.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<'_, f64>) -> Result<Gradients> {
        let mut grads = vec![0.0; self.params.len()];
        let input = self.backprop(tape, upstream, Some(&mut grads))?;
        Ok(Gradients {
            params: grads,
            input,
        })
    }

    /// Input gradient only; skips the parameter-gradient products.
    pub fn input_grad(&self, tape: &Tape, upstream: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.backprop(tape, upstream, None)
    }

    /// Single-sample backward pass: `(parameter gradient, input gradient)`.
    pub fn backward_sample(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure_len("mlp input", self.input_dim(), x.len())?;
        ensure_len("mlp upstream", self.output_dim(), upstream.len())?;
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row vector");
        let tape = self.forward_tape(x)?;
        let g = self.backward(&tape, up)?;
        Ok((g.params, g.input.into_raw_vec_and_offset().0))
    }

    fn backprop(
        &self,
        tape: &Tape,
        upstream: ArrayView2<'_, f64>,
        mut grads: Option<&mut Vec<f64>>,
    ) -> Result<Array2<f64>> {
        ensure_len("mlp upstream rows", tape.batch_size(), upstream.nrows())?;
        ensure_len("mlp upstream cols", self.output_dim(), upstream.ncols())?;
        let last = self.num_layers() - 1;
        let head = self.output;
        let mut delta = upstream.to_owned();
        ndarray::Zip::from(&mut delta)
            .and(&tape.pre[last])
            .for_each(|d, &z| *d *= head.derivative(z));
        for k in (0..=last).rev() {
            let (w, _) = self.layer(k);
            if let Some(g) = grads.as_deref_mut() {
                let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
                let off = self.layer_offset(k);
                let (gw, gb) = g[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                let mut gw = ArrayViewMut2::from_shape((fan_out, fan_in), gw).expect("contiguous");
                general_mat_mul(1.0, &delta.t(), &tape.inputs[k], 0.0, &mut gw);
                for (dst, col) in gb.iter_mut().zip(delta.sum_axis(Axis(0))) {
                    *dst = col;
                }
            }
            let mut next = delta.dot(&w);
            if k == 0 {
                return Ok(next);
            }
            ndarray::Zip::from(&mut next)
                .and(&tape.pre[k - 1])
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            delta = next;
        }
        unreachable!("loop returns at layer 0")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::grad_check;
    use ndarray::array;

    fn affine(w: f64, b: f64) -> MlpNet {
        MlpNet::from_params(&[1, 1], OutputActivation::Identity, vec![w, b]).unwrap()
    }

    #[test]
    fn single_affine_layer() {
        assert_eq!(affine(2.0, 1.0).forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn rectifier_clips_negative_hidden_units() {
        // x -> relu(x) -> identity
        let net = MlpNet::from_params(&[1, 1, 1], OutputActivation::Identity, vec![1.0, 0.0, 1.0, 0.0])
            .unwrap();
        assert_eq!(net.forward(&[-1.0]).unwrap(), vec![0.0]);
        assert_eq!(net.forward(&[2.5]).unwrap(), vec![2.5]);
    }

    #[test]
    fn tanh_head_is_zero_at_zero() {
        let net = MlpNet::from_params(&[1, 1], OutputActivation::ScaledTanh { bound: 1.0 }, vec![1.0, 0.0])
            .unwrap();
        assert_eq!(net.forward(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn zero_net_maps_zero_to_zero() {
        let net = MlpNet::zeros(&[3, 8, 8, 2], OutputActivation::Identity).unwrap();
        assert_eq!(net.forward(&[0.0; 3]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn affine_backward_is_chain_rule() {
        let (g, dx) = affine(2.0, 0.0).backward_sample(&[3.0], &[1.0]).unwrap();
        assert_eq!(g, vec![3.0, 1.0]);
        assert_eq!(dx, vec![2.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(3);
        let net = MlpNet::new(&[3, 5, 2], OutputActivation::Identity, &mut rng).unwrap();
        let (g, dx) = net.backward_sample(&[0.1, -0.4, 0.9], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = affine(1.0, 0.0);
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(net.backward_sample(&[1.0], &[1.0, 1.0]).is_err());
        assert!(MlpNet::zeros(&[3], OutputActivation::Identity).is_err());
    }

    #[test]
    fn init_respects_fan_in_bound_and_zero_bias() {
        let mut rng = Rng::new(11);
        let net = MlpNet::new(&[16, 4], OutputActivation::Identity, &mut rng).unwrap();
        let (w, b) = net.layer(0);
        assert!(w.iter().all(|v| v.abs() <= 0.25));
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_forward_matches_per_row() {
        let mut rng = Rng::new(5);
        let net = MlpNet::new(&[2, 7, 7, 3], OutputActivation::ScaledTanh { bound: 1.0 }, &mut rng).unwrap();
        let x = array![[0.3, -0.2], [1.5, 0.7], [-2.0, 0.1]];
        let batch = net.forward_batch(x.view()).unwrap();
        for (row, out) in x.rows().into_iter().zip(batch.rows()) {
            let single = net.forward(row.as_slice().unwrap()).unwrap();
            for (a, b) in single.iter().zip(out) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn two_hidden_layer_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let net = MlpNet::new(&[3, 8, 8, 2], OutputActivation::ScaledTanh { bound: 1.0 }, &mut rng)
                .unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let up: Vec<f64> = (0..2).map(|_| rng.normal()).collect();
            let (analytic, dx) = net.backward_sample(&x, &up).unwrap();
            let objective = |p: &[f64]| {
                let n = MlpNet::from_params(net.sizes(), net.output_activation(), p.to_vec()).unwrap();
                let y = n.forward(&x).unwrap();
                y.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
            };
            let report = grad_check(objective, net.params(), &analytic, 1e-6, &mut rng);
            assert!(report.max_rel_error < 1e-5, "seed {seed}: {report:?}");

            let wrt_x = |xs: &[f64]| {
                let y = net.forward(xs).unwrap();
                y.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
            };
            let report = grad_check(wrt_x, &x, &dx, 1e-6, &mut rng);
            assert!(report.max_rel_error < 1e-5, "seed {seed} input: {report:?}");
        }
    }
}
