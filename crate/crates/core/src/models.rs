//! The four players: conditional good generator, unconditional bad
//! generator, classifier with a designated feature layer, and pair
//! discriminator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{Activation, BatchNorm, Bound, Dense, Mode, NoiseSpec, WeightNormDense};
use crate::tensor::Tensor;

/// Discriminator outputs are clipped into `[D_CLAMP, 1 − D_CLAMP]`.
pub const D_CLAMP: f64 = 1e-7;

/// Parameter and state enumeration shared by every player network.
pub trait Network {
    /// Trainable tensors, in the order a forward pass binds them.
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    /// Every persisted tensor (parameters and running statistics) by name.
    fn named_state(&self) -> Vec<(String, &Tensor)>;
    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }
}

/// Weight-normalized leaky-ReLU MLP with noise on each layer input.
#[derive(Debug, Clone, PartialEq)]
pub struct WnMlp {
    pub layers: Vec<WeightNormDense>,
    pub input_noise: NoiseSpec,
    pub hidden_noise: NoiseSpec,
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct MlpOut {
    pub output: Var,
    /// Activations of each hidden layer, in order.
    pub hidden: Vec<Var>,
    pub bound: Bound,
}

impl WnMlp {
    pub fn new(input: usize, widths: &[usize], rng: &mut dyn RngCore) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input;
        for &w in widths {
            layers.push(WeightNormDense::glorot(prev, w, rng));
            prev = w;
        }
        WnMlp {
            layers,
            input_noise: NoiseSpec::NONE,
            hidden_noise: NoiseSpec::NONE,
            slope: 0.2,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.output_dim()).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
        trainable: bool,
    ) -> Result<MlpOut> {
        let mut bound = Bound::default();
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let noise = if i == 0 { self.input_noise } else { self.hidden_noise };
            h = noise.forward(tape, h, mode, rng)?;
            h = layer.forward(tape, h, &mut bound, trainable)?;
            if i < last {
                h = tape.leaky_relu(h, self.slope)?;
                hidden.push(h);
            }
        }
        Ok(MlpOut { output: h, hidden, bound })
    }

    fn state(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.v"), &l.direction));
            out.push((format!("{prefix}.{i}.g"), &l.scale));
            out.push((format!("{prefix}.{i}.b"), &l.bias));
        }
        out
    }

    fn state_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.{i}.v"), &mut l.direction));
            out.push((format!("{prefix}.{i}.g"), &mut l.scale));
            out.push((format!("{prefix}.{i}.b"), &mut l.bias));
        }
        out
    }
}

/// Classifier producing `K` logits plus the activations of one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub net: WnMlp,
    /// Index of the hidden layer used as the feature map.
    pub feature_layer: usize,
}

#[derive(Debug, Clone)]
pub struct ClassifierOut {
    pub logits: Var,
    pub features: Var,
    pub bound: Bound,
}

impl Classifier {
    pub fn num_classes(&self) -> usize {
        self.net.layers.last().map_or(0, |l| l.output_dim())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
        trainable: bool,
    ) -> Result<ClassifierOut> {
        let out = self.net.forward(tape, x, mode, rng, trainable)?;
        let features = *out
            .hidden
            .get(self.feature_layer)
            .ok_or(Error::Contract {
                reason: "feature layer index beyond the hidden layers",
            })?;
        Ok(ClassifierOut {
            logits: out.output,
            features,
            bound: out.bound,
        })
    }

    /// Eval-mode logits as a plain tensor.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = self.forward(&mut tape, xv, Mode::Eval, &mut NoRng, false)?;
        Ok(tape.tensor(out.logits))
    }

    /// Eval-mode predictions as 1-based labels (argmax over the real classes).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows())
            .map(|i| crate::tensor::argmax(logits.row(i)) + 1)
            .collect())
    }
}

/// Pair discriminator on `[x | onehot(y)]` with one sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: WnMlp,
    pub num_classes: usize,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorOut {
    pub probs: Var,
    pub bound: Bound,
}

impl Discriminator {
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        y_onehot: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
        trainable: bool,
    ) -> Result<DiscriminatorOut> {
        if tape.shape(x)[0] != tape.shape(y_onehot)[0] {
            return Err(Error::domain("discriminator", "x and y batch sizes differ"));
        }
        check_one_hot(tape.value(y_onehot), self.num_classes)?;
        let xy = tape.concat_cols(x, y_onehot)?;
        let out = self.net.forward(tape, xy, mode, rng, trainable)?;
        let p = tape.sigmoid(out.output)?;
        let p = tape.clamp(p, D_CLAMP, 1.0 - D_CLAMP)?;
        Ok(DiscriminatorOut { probs: p, bound: out.bound })
    }
}

fn check_one_hot(values: &[f64], k: usize) -> Result<()> {
    for row in values.chunks(k) {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if row.len() != k || ones != 1 || zeros != k - 1 {
            return Err(Error::domain("one_hot", "each label row must have exactly one 1"));
        }
    }
    Ok(())
}

/// Softplus + batch-norm MLP generator with a sigmoid output in `[0,1]^d`.
/// A conditional generator takes `[z | onehot(y)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub blocks: Vec<(Dense, BatchNorm)>,
    pub output: Dense,
    pub latent_dim: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratorOut {
    pub samples: Var,
    pub bound: Bound,
    pub stats: Vec<BatchStats>,
}

impl Generator {
    pub fn new(latent_dim: usize, num_classes: usize, hidden: &[usize], data_dim: usize, rng: &mut dyn RngCore) -> Self {
        let mut blocks = Vec::with_capacity(hidden.len());
        let mut prev = latent_dim + num_classes;
        for &w in hidden {
            blocks.push((Dense::glorot(prev, w, rng), BatchNorm::new(w)));
            prev = w;
        }
        Generator {
            blocks,
            output: Dense::glorot(prev, data_dim, rng),
            latent_dim,
            num_classes,
        }
    }

    pub fn is_conditional(&self) -> bool {
        self.num_classes > 0
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.blocks.iter().map(|(d, _)| d.output_dim()).collect()
    }

    pub fn data_dim(&self) -> usize {
        self.output.output_dim()
    }

    /// `y` must be a one-hot batch for a conditional generator and `None` otherwise.
    pub fn forward(
        &self,
        tape: &mut Tape,
        z: Var,
        y_onehot: Option<Var>,
        mode: Mode,
        trainable: bool,
    ) -> Result<GeneratorOut> {
        if tape.shape(z).len() != 2 || tape.shape(z)[1] != self.latent_dim {
            return Err(Error::shape("generator", tape.shape(z), &[self.latent_dim]));
        }
        let input = match (y_onehot, self.is_conditional()) {
            (Some(y), true) => {
                if tape.shape(y) != [tape.shape(z)[0], self.num_classes] {
                    return Err(Error::shape("generator", tape.shape(z), tape.shape(y)));
                }
                check_one_hot(tape.value(y), self.num_classes)?;
                tape.concat_cols(z, y)?
            }
            (None, false) => z,
            _ => {
                return Err(Error::Contract {
                    reason: "labels must be given exactly when the generator is conditional",
                })
            }
        };
        let mut bound = Bound::default();
        let mut stats = Vec::new();
        let mut h = input;
        for (dense, bn) in &self.blocks {
            h = dense.forward(tape, h, &mut bound, trainable)?;
            let (n, s) = bn.forward(tape, h, mode, &mut bound, trainable)?;
            stats.extend(s);
            h = Activation::Softplus.apply(tape, n)?;
        }
        h = self.output.forward(tape, h, &mut bound, trainable)?;
        let samples = tape.sigmoid(h)?;
        Ok(GeneratorOut { samples, bound, stats })
    }

    /// Folds batch statistics from a training-mode forward into the running averages.
    pub fn commit_stats(&mut self, stats: &[BatchStats]) {
        for ((_, bn), s) in self.blocks.iter_mut().zip(stats) {
            bn.update_running(s);
        }
    }

    /// Eval-mode samples as a plain tensor.
    pub fn sample(&self, z: &Tensor, y_onehot: Option<&Tensor>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let yv = y_onehot.map(|y| tape.constant(y));
        let out = self.forward(&mut tape, zv, yv, Mode::Eval, false)?;
        Ok(tape.tensor(out.samples))
    }

    fn state(&self, prefix: &str, with_buffers: bool) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (d, bn)) in self.blocks.iter().enumerate() {
            out.push((format!("{prefix}.{i}.w"), &d.weight));
            out.push((format!("{prefix}.{i}.b"), &d.bias));
            out.push((format!("{prefix}.{i}.gamma"), &bn.gamma));
            out.push((format!("{prefix}.{i}.beta"), &bn.beta));
            if with_buffers {
                out.push((format!("{prefix}.{i}.running_mean"), &bn.running_mean));
                out.push((format!("{prefix}.{i}.running_var"), &bn.running_var));
            }
        }
        out.push((format!("{prefix}.out.w"), &self.output.weight));
        out.push((format!("{prefix}.out.b"), &self.output.bias));
        out
    }

    fn state_mut(&mut self, prefix: &str, with_buffers: bool) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, (d, bn)) in self.blocks.iter_mut().enumerate() {
            out.push((format!("{prefix}.{i}.w"), &mut d.weight));
            out.push((format!("{prefix}.{i}.b"), &mut d.bias));
            out.push((format!("{prefix}.{i}.gamma"), &mut bn.gamma));
            out.push((format!("{prefix}.{i}.beta"), &mut bn.beta));
            if with_buffers {
                out.push((format!("{prefix}.{i}.running_mean"), &mut bn.running_mean));
                out.push((format!("{prefix}.{i}.running_var"), &mut bn.running_var));
            }
        }
        out.push((format!("{prefix}.out.w"), &mut self.output.weight));
        out.push((format!("{prefix}.out.b"), &mut self.output.bias));
        out
    }
}

impl Network for Generator {
    fn params(&self) -> Vec<&Tensor> {
        self.state("", false).into_iter().map(|(_, t)| t).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.state_mut("", false).into_iter().map(|(_, t)| t).collect()
    }

    fn named_state(&self) -> Vec<(String, &Tensor)> {
        self.state("gen", true)
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.state_mut("gen", true)
    }
}

impl Network for Classifier {
    fn params(&self) -> Vec<&Tensor> {
        self.net.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn named_state(&self) -> Vec<(String, &Tensor)> {
        self.net.state("c")
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.net.state_mut("c")
    }
}

impl Network for Discriminator {
    fn params(&self) -> Vec<&Tensor> {
        self.net.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn named_state(&self) -> Vec<(String, &Tensor)> {
        self.net.state("d")
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.net.state_mut("d")
    }
}

/// Architecture of all four players.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub data_dim: usize,
    pub num_classes: usize,
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub input_noise: f64,
    pub hidden_noise: f64,
    pub slope: f64,
    /// Hidden-layer index of the classifier's feature map; `None` means the last one.
    pub feature_layer: Option<usize>,
}

impl ModelConfig {
    /// 28×28 digits: 3×500 generators, 1000-500-250-250-250 classifier and discriminator trunks.
    pub fn mnist(num_classes: usize, latent_dim: usize) -> Self {
        ModelConfig {
            data_dim: 784,
            num_classes,
            latent_dim,
            generator_hidden: alloc::vec![500, 500, 500],
            classifier_hidden: alloc::vec![1000, 500, 250, 250, 250],
            discriminator_hidden: alloc::vec![1000, 500, 250, 250, 250],
            input_noise: 0.3,
            hidden_noise: 0.5,
            slope: 0.2,
            feature_layer: None,
        }
    }

    /// Two-hidden-layer width-64 players for points in the unit square.
    pub fn synthetic(num_classes: usize) -> Self {
        ModelConfig {
            data_dim: 2,
            num_classes,
            latent_dim: 2,
            generator_hidden: alloc::vec![64, 64],
            classifier_hidden: alloc::vec![64, 64],
            discriminator_hidden: alloc::vec![64, 64],
            input_noise: 0.0,
            hidden_noise: 0.0,
            slope: 0.2,
            feature_layer: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.latent_dim == 0 || self.num_classes < 2 {
            return Err(Error::domain("model_config", "dimensions must be positive and K ≥ 2"));
        }
        if self.classifier_hidden.is_empty() || self.discriminator_hidden.is_empty() {
            return Err(Error::domain("model_config", "classifier and discriminator need a hidden layer"));
        }
        if let Some(f) = self.feature_layer {
            if f >= self.classifier_hidden.len() {
                return Err(Error::domain("model_config", "feature layer beyond the classifier's hidden layers"));
            }
        }
        if self.classifier_hidden.iter().chain(&self.discriminator_hidden).chain(&self.generator_hidden).any(|&w| w == 0) {
            return Err(Error::domain("model_config", "layer widths must be positive"));
        }
        NoiseSpec::gaussian(self.input_noise).validate()?;
        NoiseSpec::gaussian(self.hidden_noise).validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourPlayerModel {
    pub good_gen: Generator,
    pub bad_gen: Generator,
    pub classifier: Classifier,
    pub discriminator: Discriminator,
}

impl FourPlayerModel {
    /// Glorot-uniform weights, zero biases and unit weight-norm scales, all
    /// drawn from a generator seeded with `seed`.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = cfg.num_classes;
        let good_gen = Generator::new(cfg.latent_dim, k, &cfg.generator_hidden, cfg.data_dim, &mut rng);
        let bad_gen = Generator::new(cfg.latent_dim, 0, &cfg.generator_hidden, cfg.data_dim, &mut rng);

        let mut widths = cfg.classifier_hidden.clone();
        widths.push(k);
        let mut c_net = WnMlp::new(cfg.data_dim, &widths, &mut rng);
        let mut widths = cfg.discriminator_hidden.clone();
        widths.push(1);
        let mut d_net = WnMlp::new(cfg.data_dim + k, &widths, &mut rng);
        for net in [&mut c_net, &mut d_net] {
            net.input_noise = NoiseSpec::gaussian(cfg.input_noise);
            net.hidden_noise = NoiseSpec::gaussian(cfg.hidden_noise);
            net.slope = cfg.slope;
        }
        Ok(FourPlayerModel {
            good_gen,
            bad_gen,
            classifier: Classifier {
                net: c_net,
                feature_layer: cfg.feature_layer.unwrap_or(cfg.classifier_hidden.len() - 1),
            },
            discriminator: Discriminator { net: d_net, num_classes: k },
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn latent_dim(&self) -> usize {
        self.good_gen.latent_dim
    }

    pub fn data_dim(&self) -> usize {
        self.good_gen.data_dim()
    }

    /// All persisted tensors with player-qualified names.
    pub fn named_state(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (p, net) in [
            ("gG", &self.good_gen as &dyn Network),
            ("bG", &self.bad_gen),
            ("C", &self.classifier),
            ("D", &self.discriminator),
        ] {
            out.extend(net.named_state().into_iter().map(|(n, t)| (format!("{p}/{n}"), t)));
        }
        out
    }

    pub fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (p, net) in [
            ("gG", &mut self.good_gen as &mut dyn Network),
            ("bG", &mut self.bad_gen),
            ("C", &mut self.classifier),
            ("D", &mut self.discriminator),
        ] {
            out.extend(net.named_state_mut().into_iter().map(|(n, t)| (format!("{p}/{n}"), t)));
        }
        out
    }
}

/// Builds the digit-profile model with `K` classes.
pub fn build_mnist_models(num_classes: usize, latent_dim: usize, seed: u64) -> Result<FourPlayerModel> {
    FourPlayerModel::build(&ModelConfig::mnist(num_classes, latent_dim), seed)
}

/// An RNG for code paths that must not draw randomness (eval-mode forwards).
pub struct NoRng;

impl RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        panic!("eval-mode forward drew randomness")
    }

    fn next_u64(&mut self) -> u64 {
        panic!("eval-mode forward drew randomness")
    }

    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        panic!("eval-mode forward drew randomness")
    }
}
