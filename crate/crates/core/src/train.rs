//! The four-player update schedule.
//!
//! Each iteration makes exactly one Adam step per player, in the order
//! D, gG, C, bG. Every step records its own tape and binds only the updated
//! player's parameters as trainable, so gradients reach other players only
//! through the values they contribute to the loss.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{epoch_batches, stream_rng, uniform_labels, uniform_latent, Cycler, Dataset};
use crate::error::{Error, Player, Result};
use crate::kernels;
use crate::layers::{Bound, Mode};
use crate::losses::{self, LossWeights};
use crate::models::{FourPlayerModel, Network};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{argmax, one_hot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// The full four-player game.
    Ugan,
    /// Classifier only, trained on the labeled cross-entropy.
    Supervised,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub total_epochs: u64,
    /// First epoch at which good-generator pairs enter the classifier loss;
    /// a gate at or beyond `total_epochs` never opens.
    pub gate_epoch: u64,
    pub batch_bg: usize,
    pub batch_gg: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    /// Share of each unlabeled batch turned into pseudo-labeled positives for D.
    pub pseudo_pair_fraction: f64,
    pub pseudo_warmup_epochs: u64,
    pub pseudo_ramp_epochs: u64,
    pub optimizer: AdamConfig,
    pub weights: LossWeights,
    pub pull_away_weight: f64,
    pub seed: u64,
    pub mode: TrainMode,
}

impl TrainSchedule {
    pub fn mnist() -> Self {
        TrainSchedule {
            total_epochs: 300,
            gate_epoch: 200,
            batch_bg: 50,
            batch_gg: 100,
            batch_labeled: 100,
            batch_unlabeled: 100,
            pseudo_pair_fraction: 0.5,
            pseudo_warmup_epochs: 0,
            pseudo_ramp_epochs: 50,
            optimizer: AdamConfig::default(),
            weights: LossWeights::default(),
            pull_away_weight: 0.1,
            seed: 0,
            mode: TrainMode::Ugan,
        }
    }

    pub fn synthetic() -> Self {
        TrainSchedule {
            total_epochs: 1200,
            gate_epoch: 50,
            batch_bg: 50,
            batch_gg: 100,
            batch_labeled: 100,
            batch_unlabeled: 100,
            optimizer: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            ..TrainSchedule::mnist()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.batch_bg, self.batch_gg, self.batch_labeled, self.batch_unlabeled].contains(&0) {
            return Err(Error::domain("schedule", "batch sizes must be at least 1"));
        }
        if self.batch_bg < 2 || self.batch_gg < 2 {
            return Err(Error::domain("schedule", "generator batches need 2 rows for batch norm"));
        }
        if !(0.0..=1.0).contains(&self.pseudo_pair_fraction) {
            return Err(Error::domain("schedule", "pseudo pair fraction must lie in [0, 1]"));
        }
        if !(self.pull_away_weight >= 0.0 && self.pull_away_weight.is_finite()) {
            return Err(Error::domain("schedule", "pull-away weight must be non-negative"));
        }
        self.optimizer.validate()?;
        self.weights.validate()
    }

    /// `λ0` in effect during `epoch`: zero before the gate.
    pub fn lambda0_at(&self, epoch: u64) -> f64 {
        if epoch < self.gate_epoch {
            0.0
        } else {
            self.weights.lambda0
        }
    }

    /// Pseudo-pair fraction during `epoch`, ramped linearly after the warm-up.
    pub fn pseudo_fraction_at(&self, epoch: u64) -> f64 {
        if epoch < self.pseudo_warmup_epochs {
            return 0.0;
        }
        if self.pseudo_ramp_epochs == 0 {
            return self.pseudo_pair_fraction;
        }
        let done = (epoch - self.pseudo_warmup_epochs + 1) as f64 / self.pseudo_ramp_epochs as f64;
        self.pseudo_pair_fraction * done.min(1.0)
    }
}

/// Mean per-iteration losses of one epoch, or the losses of one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Losses {
    pub d: f64,
    pub gg: f64,
    pub bg: f64,
    pub c: [f64; 4],
    pub lambda0_eff: f64,
}

impl Losses {
    fn accumulate(&mut self, other: &Losses) {
        self.d += other.d;
        self.gg += other.gg;
        self.bg += other.bg;
        for (a, b) in self.c.iter_mut().zip(other.c) {
            *a += b;
        }
    }

    fn scaled(mut self, s: f64) -> Losses {
        self.d *= s;
        self.gg *= s;
        self.bg *= s;
        self.c.iter_mut().for_each(|c| *c *= s);
        self
    }
}

/// Data consumed by one iteration.
#[derive(Debug, Clone)]
pub struct IterationBatch {
    pub x_labeled: Tensor,
    pub y_labeled: Vec<usize>,
    pub x_unlabeled: Tensor,
}

/// Labeled pairs and the unlabeled pool used for training.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub labeled: &'a Dataset,
    pub unlabeled: &'a Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub d: Adam,
    pub gg: Adam,
    pub c: Adam,
    pub bg: Adam,
}

impl Optimizers {
    pub fn new(cfg: AdamConfig, model: &FourPlayerModel) -> Self {
        Optimizers {
            d: Adam::new(cfg, &model.discriminator.params()),
            gg: Adam::new(cfg, &model.good_gen.params()),
            c: Adam::new(cfg, &model.classifier.params()),
            bg: Adam::new(cfg, &model.bad_gen.params()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: FourPlayerModel,
    pub schedule: TrainSchedule,
    pub optimizers: Optimizers,
    /// Next epoch to run.
    pub epoch: u64,
    /// Iterations completed so far.
    pub iteration: u64,
}

fn sum_grads(tape: &Tape, bounds: &[&Bound]) -> Vec<Vec<f64>> {
    let mut total = bounds[0].grads(tape);
    for b in &bounds[1..] {
        for (t, g) in total.iter_mut().zip(b.grads(tape)) {
            t.iter_mut().zip(g).for_each(|(x, y)| *x += y);
        }
    }
    total
}

fn attribute(player: Player, iteration: u64) -> impl FnOnce(Error) -> Error {
    move |e| Error::Training {
        player,
        iteration,
        source: Box::new(e),
    }
}

impl Trainer {
    pub fn new(model: FourPlayerModel, schedule: TrainSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Trainer {
            optimizers: Optimizers::new(schedule.optimizer, &model),
            model,
            schedule,
            epoch: 0,
            iteration: 0,
        })
    }

    /// Pseudo-labeled positives for D: the first `⌊fraction·B⌋` rows of the
    /// unlabeled batch with C's eval-mode argmax labels (1-based).
    pub fn pseudo_positive_pairs(&self, x_unlabeled: &Tensor, fraction: f64) -> Result<Option<(Tensor, Vec<usize>)>> {
        let m = libm::floor(fraction * x_unlabeled.rows() as f64) as usize;
        if m == 0 {
            return Ok(None);
        }
        let idx: Vec<usize> = (0..m).collect();
        let x = x_unlabeled.select_rows(&idx)?;
        let y = self.model.classifier.predict(&x)?;
        Ok(Some((x, y)))
    }

    /// Labels drawn from C's softmax over the real classes, without gradient.
    fn sample_classifier_labels(&self, x: &Tensor, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        let logits = self.model.classifier.logits(x)?;
        let k = logits.cols();
        let mut probs = alloc::vec![0.0; k];
        Ok((0..logits.rows())
            .map(|i| {
                kernels::softmax_into(logits.row(i), &mut probs);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (j, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return j + 1;
                    }
                }
                argmax(&probs) + 1
            })
            .collect())
    }

    /// Discriminator step; returns `L_D`.
    pub fn step_d(
        &mut self,
        batch: &IterationBatch,
        z_gg: &Tensor,
        y_gg: &[usize],
        pseudo: Option<&(Tensor, Vec<usize>)>,
        rng: &mut dyn RngCore,
    ) -> Result<f64> {
        let k = self.model.num_classes();
        let (x_pos, y_pos) = match pseudo {
            Some((x, y)) => (batch.x_labeled.concat_rows(x)?, [batch.y_labeled.as_slice(), y].concat()),
            None => (batch.x_labeled.clone(), batch.y_labeled.clone()),
        };
        let y_c = self.sample_classifier_labels(&batch.x_unlabeled, rng)?;

        let mut tape = Tape::new();
        let z = tape.constant(z_gg);
        let yg = tape.constant(&one_hot(y_gg, k)?);
        let gen = self.model.good_gen.forward(&mut tape, z, Some(yg), Mode::Train, false)?;
        let x_gg = tape.constant(&tape.tensor(gen.samples));

        let d = &self.model.discriminator;
        let xp = tape.constant(&x_pos);
        let yp = tape.constant(&one_hot(&y_pos, k)?);
        let real = d.forward(&mut tape, xp, yp, Mode::Train, rng, true)?;
        let fake_g = d.forward(&mut tape, x_gg, yg, Mode::Train, rng, true)?;
        let xu = tape.constant(&batch.x_unlabeled);
        let yc = tape.constant(&one_hot(&y_c, k)?);
        let fake_c = d.forward(&mut tape, xu, yc, Mode::Train, rng, true)?;
        let loss = losses::loss_d(&mut tape, real.probs, fake_g.probs, fake_c.probs)?;
        let value = tape.scalar(loss);
        tape.backward(loss)?;
        let grads = sum_grads(&tape, &[&real.bound, &fake_g.bound, &fake_c.bound]);
        self.optimizers.d.update(&mut self.model.discriminator.params_mut(), &grads)?;
        Ok(value)
    }

    /// Good-generator step; returns `L_gG`.
    pub fn step_gg(&mut self, z_gg: &Tensor, y_gg: &[usize], rng: &mut dyn RngCore) -> Result<f64> {
        let k = self.model.num_classes();
        let mut tape = Tape::new();
        let z = tape.constant(z_gg);
        let y = tape.constant(&one_hot(y_gg, k)?);
        let gen = self.model.good_gen.forward(&mut tape, z, Some(y), Mode::Train, true)?;
        let d = self
            .model
            .discriminator
            .forward(&mut tape, gen.samples, y, Mode::Train, rng, false)?;
        let loss = losses::loss_gg(&mut tape, d.probs)?;
        let value = tape.scalar(loss);
        tape.backward(loss)?;
        let grads = gen.bound.grads(&tape);
        self.optimizers.gg.update(&mut self.model.good_gen.params_mut(), &grads)?;
        self.model.good_gen.commit_stats(&gen.stats);
        Ok(value)
    }

    /// Classifier step; returns `[c1, c2, c3, c4]`. With `full = false` only
    /// the labeled term is computed and the rest are reported as zero.
    #[allow(clippy::too_many_arguments)]
    pub fn step_c(
        &mut self,
        batch: &IterationBatch,
        z_gg: &Tensor,
        y_gg: &[usize],
        z_bg: &Tensor,
        lambda0: f64,
        full: bool,
        rng: &mut dyn RngCore,
    ) -> Result<[f64; 4]> {
        let k = self.model.num_classes();
        let c = &self.model.classifier;
        let mut tape = Tape::new();
        let xl = tape.constant(&batch.x_labeled);
        let out_l = c.forward(&mut tape, xl, Mode::Train, rng, true)?;
        let c1 = losses::loss_c1(&mut tape, out_l.logits, &batch.y_labeled)?;
        if !full {
            let value = tape.scalar(c1);
            tape.backward(c1)?;
            let grads = out_l.bound.grads(&tape);
            self.optimizers.c.update(&mut self.model.classifier.params_mut(), &grads)?;
            return Ok([value, 0.0, 0.0, 0.0]);
        }

        let z = tape.constant(z_gg);
        let yg = tape.constant(&one_hot(y_gg, k)?);
        let gen = self.model.good_gen.forward(&mut tape, z, Some(yg), Mode::Train, false)?;
        let out_g = c.forward(&mut tape, gen.samples, Mode::Train, rng, true)?;
        let c2 = losses::loss_c2(&mut tape, out_g.logits, y_gg)?;

        let xu = tape.constant(&batch.x_unlabeled);
        let out_u = c.forward(&mut tape, xu, Mode::Train, rng, true)?;
        let c3 = losses::loss_c3(&mut tape, out_u.logits)?;

        let zb = tape.constant(z_bg);
        let bad = self.model.bad_gen.forward(&mut tape, zb, None, Mode::Train, false)?;
        let out_b = c.forward(&mut tape, bad.samples, Mode::Train, rng, true)?;
        let c4 = losses::loss_c4(&mut tape, out_b.logits)?;

        let parts = [c1, c2, c3, c4];
        let values = parts.map(|v| tape.scalar(v));
        let total = losses::loss_c_total(&mut tape, parts, lambda0, &self.schedule.weights)?;
        tape.backward(total)?;
        let grads = sum_grads(&tape, &[&out_l.bound, &out_g.bound, &out_u.bound, &out_b.bound]);
        self.optimizers.c.update(&mut self.model.classifier.params_mut(), &grads)?;
        Ok(values)
    }

    /// Bad-generator step; returns `L_bG`. C is frozen, so feature matching
    /// moves only the generator.
    pub fn step_bg(&mut self, x_unlabeled: &Tensor, z_bg: &Tensor, rng: &mut dyn RngCore) -> Result<f64> {
        let c = &self.model.classifier;
        let mut tape = Tape::new();
        let xu = tape.constant(x_unlabeled);
        let f_u = c.forward(&mut tape, xu, Mode::Train, rng, false)?.features;
        let f_u = tape.constant(&tape.tensor(f_u));
        let z = tape.constant(z_bg);
        let gen = self.model.bad_gen.forward(&mut tape, z, None, Mode::Train, true)?;
        let f_b = c.forward(&mut tape, gen.samples, Mode::Train, rng, false)?.features;
        let loss = losses::loss_bg(&mut tape, f_u, f_b, self.schedule.pull_away_weight)?;
        let value = tape.scalar(loss);
        tape.backward(loss)?;
        let grads = gen.bound.grads(&tape);
        self.optimizers.bg.update(&mut self.model.bad_gen.params_mut(), &grads)?;
        self.model.bad_gen.commit_stats(&gen.stats);
        Ok(value)
    }

    /// One iteration at `epoch`: D, gG, C, bG in that order.
    pub fn train_iteration(&mut self, batch: &IterationBatch, epoch: u64, rng: &mut dyn RngCore) -> Result<Losses> {
        let s = &self.schedule;
        let (k, latent) = (self.model.num_classes(), self.model.latent_dim());
        let lambda0 = s.lambda0_at(epoch);
        let it = self.iteration;
        let mut out = Losses {
            lambda0_eff: lambda0,
            ..Losses::default()
        };
        let y_gg = uniform_labels(s.batch_gg, k, rng);
        let z_gg = uniform_latent(s.batch_gg, latent, rng);
        let z_bg = uniform_latent(s.batch_bg, latent, rng);

        if s.mode == TrainMode::Supervised {
            out.c = self
                .step_c(batch, &z_gg, &y_gg, &z_bg, 0.0, false, rng)
                .map_err(attribute(Player::Classifier, it))?;
            self.iteration += 1;
            return Ok(out);
        }

        let pseudo = self
            .pseudo_positive_pairs(&batch.x_unlabeled, s.pseudo_fraction_at(epoch))
            .map_err(attribute(Player::Discriminator, it))?;
        out.d = self
            .step_d(batch, &z_gg, &y_gg, pseudo.as_ref(), rng)
            .map_err(attribute(Player::Discriminator, it))?;
        out.gg = self
            .step_gg(&z_gg, &y_gg, rng)
            .map_err(attribute(Player::GoodGenerator, it))?;
        out.c = self
            .step_c(batch, &z_gg, &y_gg, &z_bg, lambda0, true, rng)
            .map_err(attribute(Player::Classifier, it))?;
        out.bg = self
            .step_bg(&batch.x_unlabeled, &z_bg, rng)
            .map_err(attribute(Player::BadGenerator, it))?;
        self.iteration += 1;
        Ok(out)
    }

    /// One pass over the unlabeled pool; returns mean losses over iterations.
    ///
    /// All randomness of epoch `e` comes from streams of the run seed keyed by
    /// `e`, so an epoch replays identically after a resume.
    pub fn train_epoch(&mut self, data: TrainData<'_>) -> Result<Losses> {
        let epoch = self.epoch;
        let seed = self.schedule.seed;
        let n_u = data.unlabeled.rows();
        let order: Vec<usize> = (0..n_u).collect();
        let batches = epoch_batches(&order, self.schedule.batch_unlabeled, seed, 3 * epoch)?;
        let labeled: Vec<usize> = (0..data.labeled.len()).collect();
        let mut cycler = Cycler::new(labeled, stream_rng(seed, 3 * epoch + 1))?;
        let mut rng: ChaCha8Rng = stream_rng(seed, 3 * epoch + 2);

        let mut total = Losses::default();
        for idx in &batches {
            let li = cycler.next_batch(self.schedule.batch_labeled);
            let sub = data.labeled.subset(&li)?;
            let batch = IterationBatch {
                x_labeled: sub.images,
                y_labeled: sub.labels,
                x_unlabeled: data.unlabeled.select_rows(idx)?,
            };
            let l = self.train_iteration(&batch, epoch, &mut rng)?;
            total.accumulate(&l);
        }
        self.epoch += 1;
        let mut mean = total.scaled(1.0 / batches.len() as f64);
        mean.lambda0_eff = self.schedule.lambda0_at(epoch);
        Ok(mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_two_moons, stratified_split};
    use crate::models::ModelConfig;
    use rand::SeedableRng;

    fn setup(mode: TrainMode) -> (Trainer, Dataset, Tensor) {
        let ds = make_two_moons(120, 0.1, 1).unwrap();
        let split = stratified_split(&ds, 8, 2).unwrap();
        let labeled = ds.subset(&split.labeled).unwrap();
        let unlabeled = ds.images.select_rows(&split.unlabeled).unwrap();
        let model = FourPlayerModel::build(&ModelConfig::synthetic(2), 3).unwrap();
        let schedule = TrainSchedule {
            total_epochs: 4,
            gate_epoch: 2,
            batch_bg: 16,
            batch_gg: 16,
            batch_labeled: 8,
            batch_unlabeled: 32,
            mode,
            ..TrainSchedule::synthetic()
        };
        (Trainer::new(model, schedule).unwrap(), labeled, unlabeled)
    }

    fn batch(labeled: &Dataset, unlabeled: &Tensor) -> IterationBatch {
        IterationBatch {
            x_labeled: labeled.images.clone(),
            y_labeled: labeled.labels.clone(),
            x_unlabeled: unlabeled.select_rows(&(0..32).collect::<Vec<_>>()).unwrap(),
        }
    }

    #[test]
    fn schedule_defaults() {
        let s = TrainSchedule::mnist();
        assert_eq!((s.gate_epoch, s.batch_bg, s.batch_gg), (200, 50, 100));
        assert_eq!(TrainSchedule::synthetic().gate_epoch, 50);
        assert_eq!(s.lambda0_at(199), 0.0);
        assert_eq!(s.lambda0_at(200), 1.0);
        assert!((s.pseudo_fraction_at(0) - 0.01).abs() < 1e-15);
        assert_eq!(s.pseudo_fraction_at(49), 0.5);
        assert_eq!(s.pseudo_fraction_at(500), 0.5);
        let late = TrainSchedule {
            gate_epoch: 400,
            ..s
        };
        assert!(late.validate().is_ok());
        assert_eq!(late.lambda0_at(299), 0.0);
    }

    #[test]
    fn pseudo_pairs_follow_classifier_argmax() {
        let (t, _, u) = setup(TrainMode::Ugan);
        let x = u.select_rows(&(0..20).collect::<Vec<_>>()).unwrap();
        assert!(t.pseudo_positive_pairs(&x, 0.0).unwrap().is_none());
        let (px, py) = t.pseudo_positive_pairs(&x, 1.0).unwrap().unwrap();
        assert_eq!(px.rows(), 20);
        let logits = t.model.classifier.logits(&px).unwrap();
        for (i, &y) in py.iter().enumerate() {
            assert_eq!(y, argmax(logits.row(i)) + 1);
        }
        let (half, _) = t.pseudo_positive_pairs(&x, 0.55).unwrap().unwrap();
        assert_eq!(half.rows(), 11);
    }

    #[test]
    fn each_step_touches_only_its_player() {
        let (mut t, l, u) = setup(TrainMode::Ugan);
        let b = batch(&l, &u);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = uniform_latent(16, t.model.latent_dim(), &mut rng);
        let y = uniform_labels(16, 2, &mut rng);

        let before = t.model.clone();
        t.step_d(&b, &z, &y, None, &mut rng).unwrap();
        assert_ne!(t.model.discriminator, before.discriminator);
        assert_eq!(t.model.good_gen, before.good_gen);
        assert_eq!(t.model.classifier, before.classifier);
        assert_eq!(t.model.bad_gen, before.bad_gen);

        let before = t.model.clone();
        t.step_gg(&z, &y, &mut rng).unwrap();
        assert_ne!(t.model.good_gen, before.good_gen);
        assert_eq!(t.model.discriminator, before.discriminator);
        assert_eq!(t.model.classifier, before.classifier);
        assert_eq!(t.model.bad_gen, before.bad_gen);

        let before = t.model.clone();
        t.step_c(&b, &z, &y, &z, 1.0, true, &mut rng).unwrap();
        assert_ne!(t.model.classifier, before.classifier);
        assert_eq!(t.model.discriminator, before.discriminator);
        assert_eq!(t.model.good_gen, before.good_gen);
        assert_eq!(t.model.bad_gen, before.bad_gen);

        let before = t.model.clone();
        t.step_bg(&b.x_unlabeled, &z, &mut rng).unwrap();
        assert_ne!(t.model.bad_gen, before.bad_gen);
        assert_eq!(t.model.discriminator, before.discriminator);
        assert_eq!(t.model.good_gen, before.good_gen);
        assert_eq!(t.model.classifier, before.classifier);
    }

    #[test]
    fn gate_controls_reported_lambda0() {
        let (mut t, l, u) = setup(TrainMode::Ugan);
        let data = TrainData {
            labeled: &l,
            unlabeled: &u,
        };
        for e in 0..4 {
            let losses = t.train_epoch(data).unwrap();
            assert_eq!(losses.lambda0_eff, if e < 2 { 0.0 } else { 1.0 });
            assert!(losses.c.iter().all(|&c| c >= 0.0));
        }
        assert_eq!(t.epoch, 4);
        assert_eq!(t.iteration, 16);
    }

    #[test]
    fn iteration_is_reproducible() {
        let run = || {
            let (mut t, l, u) = setup(TrainMode::Ugan);
            let b = batch(&l, &u);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let losses = t.train_iteration(&b, 0, &mut rng).unwrap();
            (losses, t.model)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn supervised_mode_trains_only_the_classifier() {
        let (mut t, l, u) = setup(TrainMode::Supervised);
        let before = t.model.clone();
        let losses = t
            .train_epoch(TrainData {
                labeled: &l,
                unlabeled: &u,
            })
            .unwrap();
        assert_eq!((losses.d, losses.gg, losses.bg), (0.0, 0.0, 0.0));
        assert!(losses.c[0] > 0.0);
        assert_ne!(t.model.classifier, before.classifier);
        assert_eq!(t.model.discriminator, before.discriminator);
    }

    #[test]
    fn non_finite_loss_names_player_and_iteration() {
        let (mut t, l, u) = setup(TrainMode::Ugan);
        t.model.classifier.net.layers[0].bias.data_mut()[0] = f64::NAN;
        let b = batch(&l, &u);
        let err = t.train_iteration(&b, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        match err {
            Error::Training { iteration, .. } => assert_eq!(iteration, 0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
