//! Dense, weight-normalized dense, batch norm, noise/dropout and activations.
//!
//! Layers hold their parameters as plain tensors and are bound onto a tape
//! for each forward pass. Binding with `trainable = false` records the
//! parameters as constants, so a frozen layer never collects gradient.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Softplus,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::LeakyRelu(slope) => tape.leaky_relu(x, slope),
            Activation::Softplus => tape.softplus(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Samples a `rows × cols` matrix from Glorot's uniform distribution.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Tensor {
    let limit = libm::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(&[rows, cols], data).expect("glorot shape")
}

/// Tape handles for a bound parameter list, in the owner's parameter order.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    fn push(&mut self, tape: &mut Tape, t: &Tensor, trainable: bool) -> Var {
        let v = tape.bind(t, trainable);
        self.vars.push(v);
        v
    }

    /// Gradients after `backward`, zero-filled where the tape has none.
    pub fn grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| {
                tape.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
            })
            .collect()
    }
}

/// `y = x Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.rows()] {
            return Err(Error::shape("dense", weight.shape(), bias.shape()));
        }
        Ok(Dense { weight, bias })
    }

    pub fn glorot(input: usize, output: usize, rng: &mut dyn RngCore) -> Self {
        Dense {
            weight: glorot_uniform(output, input, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, bound: &mut Bound, trainable: bool) -> Result<Var> {
        if tape.shape(x).len() != 2 || tape.shape(x)[1] != self.input_dim() {
            return Err(Error::shape("dense", tape.shape(x), self.weight.shape()));
        }
        let w = bound.push(tape, &self.weight, trainable);
        let b = bound.push(tape, &self.bias, trainable);
        let y = tape.matmul_bt(x, w)?;
        tape.add_row(y, b)
    }
}

/// Dense layer with weight `g · v / ‖v‖` taken row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightNormDense {
    pub direction: Tensor,
    pub scale: Tensor,
    pub bias: Tensor,
}

impl WeightNormDense {
    pub fn glorot(input: usize, output: usize, rng: &mut dyn RngCore) -> Self {
        WeightNormDense {
            direction: glorot_uniform(output, input, rng),
            scale: Tensor::filled(&[output], 1.0),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.direction.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.direction.rows()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.direction, &self.scale, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.direction, &mut self.scale, &mut self.bias]
    }

    /// The weight matrix the layer actually applies.
    pub fn effective_weight(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = tape.constant(&self.direction);
        let g = tape.constant(&self.scale);
        let w = weight_norm(&mut tape, v, g)?;
        Ok(tape.tensor(w))
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, bound: &mut Bound, trainable: bool) -> Result<Var> {
        if tape.shape(x).len() != 2 || tape.shape(x)[1] != self.input_dim() {
            return Err(Error::shape("weight_norm_dense", tape.shape(x), self.direction.shape()));
        }
        let v = bound.push(tape, &self.direction, trainable);
        let g = bound.push(tape, &self.scale, trainable);
        let b = bound.push(tape, &self.bias, trainable);
        let w = weight_norm(tape, v, g)?;
        let y = tape.matmul_bt(x, w)?;
        tape.add_row(y, b)
    }
}

/// `g · v / ‖v‖` per row of `v`.
pub fn weight_norm(tape: &mut Tape, v: Var, g: Var) -> Result<Var> {
    let unit = tape.row_normalize(v)?;
    tape.mul_col(unit, g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Tensor::filled(&[features], 1.0),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::filled(&[features], 1.0),
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.numel()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.gamma, &mut self.beta]
    }

    /// Train mode normalizes with batch statistics and returns them; eval
    /// mode uses the running statistics.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        bound: &mut Bound,
        trainable: bool,
    ) -> Result<(Var, Option<BatchStats>)> {
        let gamma = bound.push(tape, &self.gamma, trainable);
        let beta = bound.push(tape, &self.beta, trainable);
        match mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm(x, gamma, beta, self.epsilon)?;
                Ok((y, Some(stats)))
            }
            Mode::Eval => {
                let shift = Tensor::vector(self.running_mean.data().iter().map(|m| -m).collect());
                let inv = Tensor::vector(
                    self.running_var
                        .data()
                        .iter()
                        .map(|v| 1.0 / libm::sqrt(v + self.epsilon))
                        .collect(),
                );
                let shift = tape.constant(&shift);
                let inv = tape.constant(&inv);
                let y = tape.add_row(x, shift)?;
                let y = tape.mul_row(y, inv)?;
                let y = tape.mul_row(y, gamma)?;
                Ok((tape.add_row(y, beta)?, None))
            }
        }
    }

    /// `running ← momentum · running + (1 − momentum) · batch`.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}

/// Additive Gaussian noise followed by inverted dropout; identity in eval mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub gaussian_sigma: f64,
    pub dropout_rate: f64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        gaussian_sigma: 0.0,
        dropout_rate: 0.0,
    };

    pub fn gaussian(sigma: f64) -> Self {
        NoiseSpec {
            gaussian_sigma: sigma,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::domain("noise", "gaussian sigma must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::domain("noise", "dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, mode: Mode, rng: &mut dyn RngCore) -> Result<Var> {
        self.validate()?;
        if mode == Mode::Eval {
            return Ok(x);
        }
        let shape = tape.shape(x).to_vec();
        let n = tape.value(x).len();
        let mut y = x;
        if self.gaussian_sigma > 0.0 {
            let eps: Vec<f64> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    self.gaussian_sigma * z
                })
                .collect();
            let eps = tape.constant(&Tensor::new(&shape, eps)?);
            y = tape.add(y, eps)?;
        }
        if self.dropout_rate > 0.0 {
            let keep = 1.0 - self.dropout_rate;
            let mask: Vec<f64> = (0..n)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let mask = tape.constant(&Tensor::new(&shape, mask)?);
            y = tape.mul(y, mask)?;
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheck};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run_dense(layer: &Dense, x: &Tensor) -> Vec<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = layer.forward(&mut tape, xv, &mut Bound::default(), false).unwrap();
        tape.value(y).to_vec()
    }

    #[test]
    fn dense_zero_weight_returns_bias() {
        let layer = Dense::new(Tensor::zeros(&[2, 3]), Tensor::vector(vec![0.5, -1.0])).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(run_dense(&layer, &x), vec![0.5, -1.0, 0.5, -1.0]);
    }

    #[test]
    fn dense_identity_weight_is_identity() {
        let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let layer = Dense::new(eye, Tensor::zeros(&[3])).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.25, 5.0, -6.0]).unwrap();
        assert_eq!(run_dense(&layer, &x), x.data().to_vec());
    }

    #[test]
    fn dense_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = Dense {
            weight: glorot_uniform(7, 5, &mut rng),
            bias: Tensor::vector(glorot_uniform(1, 7, &mut rng).into_data()),
        };
        let x = glorot_uniform(4, 5, &mut rng);
        let got = run_dense(&layer, &x);
        for i in 0..4 {
            for o in 0..7 {
                let mut s = layer.bias.data()[o];
                for k in 0..5 {
                    s += x.data()[i * 5 + k] * layer.weight.data()[o * 5 + k];
                }
                assert!((got[i * 7 + o] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_rejects_wrong_input_width() {
        let layer = Dense::new(Tensor::zeros(&[2, 3]), Tensor::zeros(&[2])).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[1, 4]));
        assert!(layer.forward(&mut tape, x, &mut Bound::default(), false).is_err());
    }

    #[test]
    fn weight_norm_examples() {
        let layer = WeightNormDense {
            direction: Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap(),
            scale: Tensor::vector(vec![1.0]),
            bias: Tensor::zeros(&[1]),
        };
        let w = layer.effective_weight().unwrap();
        assert!((w.data()[0] - 0.6).abs() < 1e-15 && (w.data()[1] - 0.8).abs() < 1e-15);

        let zero = WeightNormDense {
            direction: Tensor::zeros(&[1, 2]),
            ..layer.clone()
        };
        assert!(matches!(zero.effective_weight(), Err(Error::Domain { .. })));
    }

    #[test]
    fn weight_norm_rows_have_norm_g() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = WeightNormDense::glorot(6, 4, &mut rng);
        layer.scale = Tensor::vector(vec![0.5, 2.0, 1.0, 3.5]);
        let w = layer.effective_weight().unwrap();
        for (r, g) in layer.scale.data().iter().enumerate() {
            let n = libm::sqrt(w.row(r).iter().map(|x| x * x).sum());
            assert!((n - g).abs() < 1e-10);
        }
    }

    #[test]
    fn batch_norm_eval_identity_and_momentum() {
        let mut bn = BatchNorm::new(2);
        bn.epsilon = 0.0;
        let x = Tensor::matrix(2, 2, vec![1.0, -3.0, 0.5, 7.0]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let (y, stats) = bn.forward(&mut tape, xv, Mode::Eval, &mut Bound::default(), false).unwrap();
        assert!(stats.is_none());
        assert_eq!(tape.value(y), x.data());

        let stats = BatchStats {
            mean: vec![2.0, -1.0],
            var: vec![4.0, 0.5],
        };
        bn.running_mean = Tensor::vector(vec![1.0, 1.0]);
        bn.update_running(&stats);
        assert!((bn.running_mean.data()[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);
        assert!((bn.running_mean.data()[1] - (0.9 - 0.1)).abs() < 1e-15);
        assert!((bn.running_var.data()[0] - (0.9 + 0.4)).abs() < 1e-15);
    }

    #[test]
    fn batch_norm_train_needs_two_rows() {
        let bn = BatchNorm::new(3);
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[1, 3]));
        let r = bn.forward(&mut tape, x, Mode::Train, &mut Bound::default(), false);
        assert!(matches!(r, Err(Error::Domain { .. })));
    }

    #[test]
    fn noise_is_identity_when_off_or_in_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let loud = NoiseSpec {
            gaussian_sigma: 2.0,
            dropout_rate: 0.5,
        };
        for (spec, mode) in [(NoiseSpec::NONE, Mode::Train), (loud, Mode::Eval)] {
            let mut tape = Tape::new();
            let xv = tape.constant(&x);
            let y = spec.forward(&mut tape, xv, mode, &mut rng).unwrap();
            assert_eq!(tape.value(y), x.data());
        }
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = NoiseSpec {
            gaussian_sigma: 0.0,
            dropout_rate: 0.3,
        };
        let x = Tensor::filled(&[1000, 1], 2.0);
        let mut total = 0.0;
        for _ in 0..100 {
            let mut tape = Tape::new();
            let xv = tape.constant(&x);
            let y = spec.forward(&mut tape, xv, Mode::Train, &mut rng).unwrap();
            total += tape.value(y).iter().sum::<f64>();
        }
        let mean = total / 1e5;
        assert!((mean - 2.0).abs() / 2.0 < 0.01, "mean {mean}");
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = glorot_uniform(5, 4, &mut rng);
        let wn = WeightNormDense::glorot(4, 3, &mut rng);
        let d = Dense::glorot(3, 2, &mut rng);
        let bn = BatchNorm::new(3);
        let mut inputs = vec![x];
        inputs.extend(wn.params().into_iter().cloned());
        inputs.extend(bn.params().into_iter().cloned());
        inputs.extend(d.params().into_iter().cloned());
        let f = |tape: &mut Tape, v: &[Var]| -> Result<Var> {
            let h = weight_norm(tape, v[1], v[2])?;
            let h = tape.matmul_bt(v[0], h)?;
            let h = tape.add_row(h, v[3])?;
            let h = tape.leaky_relu(h, 0.2)?;
            let (h, _) = tape.batch_norm(h, v[4], v[5], 1e-5)?;
            let h = tape.softplus(h)?;
            let h = tape.matmul_bt(h, v[6])?;
            let h = tape.add_row(h, v[7])?;
            let h = tape.sigmoid(h)?;
            tape.sum_sq(h)
        };
        let cfg = GradCheck::default();
        let report = check_gradients(&inputs, f, &cfg).unwrap();
        assert!(report.passed(cfg.tolerance), "{report:?}");
    }
}
