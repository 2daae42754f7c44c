use rand::Rng;

use super::matrix::{softmax, Matrix};
use super::params::{LayoutBuilder, ParamVector};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Softmax,
}

impl Activation {
    fn apply(self, m: &mut Matrix) {
        match self {
            Activation::Relu => m.data_mut().iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Tanh => m.data_mut().iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Identity => {}
            Activation::Softmax => {
                for r in 0..m.rows() {
                    let p = softmax(m.row(r));
                    m.row_mut(r).copy_from_slice(&p);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    weight_offset: usize,
    bias_offset: usize,
}

/// Stack of fully connected layers, `y = act(x·W + b)` with `W` stored
/// `[in × out]`. The network records only shapes and offsets; weights live in
/// a [`ParamVector`] that may be shared with other networks.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

impl DenseNet {
    /// Registers `name.{i}.weight` / `name.{i}.bias` segments for each layer.
    /// `dims` has one more entry than `activations`.
    pub fn register(
        layout: &mut LayoutBuilder,
        name: &str,
        dims: &[usize],
        activations: &[Activation],
    ) -> Result<Self> {
        if dims.len() != activations.len() + 1 || activations.is_empty() {
            return Err(Error::Config(format!(
                "{name}: {} dims for {} activations",
                dims.len(),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .enumerate()
            .map(|(i, (w, &activation))| DenseLayer {
                in_dim: w[0],
                out_dim: w[1],
                activation,
                weight_offset: layout.push(format!("{name}.{i}.weight"), &[w[0], w[1]]),
                bias_offset: layout.push(format!("{name}.{i}.bias"), &[w[1]]),
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamVector, rng: &mut R) {
        for layer in &self.layers {
            let bound = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            let n = layer.in_dim * layer.out_dim;
            let values = params.values_mut();
            for v in &mut values[layer.weight_offset..layer.weight_offset + n] {
                *v = rng.random_range(-bound..bound);
            }
            for v in &mut values[layer.bias_offset..layer.bias_offset + layer.out_dim] {
                *v = 0.0;
            }
        }
    }

    pub fn forward(&self, params: &ParamVector, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.input_dim() {
            return Err(Error::Config(format!(
                "input width {} does not match network input {}",
                input.cols(),
                self.input_dim()
            )));
        }
        let values = params.values();
        let mut x = input.clone();
        for layer in &self.layers {
            let w = &values[layer.weight_offset..layer.weight_offset + layer.in_dim * layer.out_dim];
            let b = &values[layer.bias_offset..layer.bias_offset + layer.out_dim];
            let mut y = x.matmul_slice(w, layer.out_dim);
            for r in 0..y.rows() {
                for (v, bv) in y.row_mut(r).iter_mut().zip(b) {
                    *v += bv;
                }
            }
            layer.activation.apply(&mut y);
            x = y;
        }
        Ok(x)
    }

    /// Records the forward pass on `tape`.
    pub fn record(&self, tape: &mut Tape<'_>, input: Var) -> Var {
        let mut x = input;
        for layer in &self.layers {
            let w = tape.param(layer.weight_offset, layer.in_dim, layer.out_dim);
            let b = tape.param(layer.bias_offset, 1, layer.out_dim);
            let h = tape.matmul(x, w);
            let h = tape.add_bias(h, b);
            x = match layer.activation {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
                Activation::Identity => h,
                Activation::Softmax => tape.softmax(h),
            };
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Layout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(dims: &[usize], acts: &[Activation]) -> (DenseNet, ParamVector) {
        let mut b = Layout::builder();
        let net = DenseNet::register(&mut b, "net", dims, acts).unwrap();
        (net, ParamVector::zeros(b.build()))
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let (net, mut p) = net(&[2, 2], &[Activation::Identity]);
        p.values_mut()[..4].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let out = net.forward(&p, &Matrix::row_vector(&[1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_relu_net_outputs_zero() {
        let (net, p) = net(&[3, 4, 2], &[Activation::Relu, Activation::Relu]);
        let out = net.forward(&p, &Matrix::row_vector(&[1.0, -2.0, 3.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn scalar_affine_layer() {
        // W=[[2]], b=[1], x=3 -> 7
        let (net, mut p) = net(&[1, 1], &[Activation::Identity]);
        p.values_mut().copy_from_slice(&[2.0, 1.0]);
        let out = net.forward(&p, &Matrix::row_vector(&[3.0])).unwrap();
        assert_eq!(out.data(), &[7.0]);
    }

    #[test]
    fn batch_in_batch_out() {
        let (net, mut p) = net(&[3, 5, 2], &[Activation::Tanh, Activation::Softmax]);
        net.init(&mut p, &mut ChaCha8Rng::seed_from_u64(3));
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.0], [0.0, 0.0, 0.0], [2.0, 2.0, 2.0]]).unwrap();
        let y = net.forward(&p, &x).unwrap();
        assert_eq!((y.rows(), y.cols()), (4, 2));
        for r in 0..4 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // deterministic
        assert_eq!(y, net.forward(&p, &x).unwrap());
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let (net, p) = net(&[3, 1], &[Activation::Identity]);
        assert!(matches!(
            net.forward(&p, &Matrix::row_vector(&[1.0, 2.0])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn recorded_forward_matches_plain_forward() {
        let acts = [Activation::Relu, Activation::Tanh, Activation::Softmax];
        let (net, mut p) = net(&[4, 6, 5, 3], &acts);
        net.init(&mut p, &mut ChaCha8Rng::seed_from_u64(9));
        let x = Matrix::from_rows(&[[0.5, -0.1, 0.3, 0.9], [0.0, 1.0, -1.0, 0.2]]).unwrap();
        let plain = net.forward(&p, &x).unwrap();
        let mut tape = Tape::new(&p);
        let xv = tape.constant(x);
        let y = net.record(&mut tape, xv);
        for (a, b) in tape.value(y).data().iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
