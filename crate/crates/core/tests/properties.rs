use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ugan_core::data::{epoch_batches, make_gauss_mixture, stratified_split, Dataset};
use ugan_core::eval::aggregate_runs;
use ugan_core::kernels::{lse, softmax_into};
use ugan_core::layers::{Activation, Mode, NoiseSpec, WeightNormDense};
use ugan_core::losses;
use ugan_core::models::{FourPlayerModel, ModelConfig};
use ugan_core::tensor::{one_hot, Tensor};
use ugan_core::theory::{self, CategoricalJoint, EmProblem, EmState};
use ugan_core::Tape;

fn logits(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, k)
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |w| {
        let t: f64 = w.iter().sum();
        (t > 1e-6).then(|| w.into_iter().map(|v| v / t).collect())
    })
}

fn explicit_k_plus_one(l: &[f64]) -> Vec<f64> {
    let mut ext = l.to_vec();
    ext.push(0.0);
    let mut p = vec![0.0; ext.len()];
    softmax_into(&ext, &mut p);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lse_is_shift_invariant(l in logits(7), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
        let a = lse(&l).unwrap() + c;
        let b = lse(&shifted).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn softmax_sums_to_one(l in logits(11)) {
        let mut p = vec![0.0; l.len()];
        softmax_into(&l, &mut p);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn backward_is_linear(
        x in prop::collection::vec(-2.0f64..2.0, 6),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let t = Tensor::matrix(2, 3, x).unwrap();
        let grad_of = |wa: f64, wb: f64| {
            let mut tape = Tape::new();
            let v = tape.param(&t);
            let f = tape.sigmoid(v).unwrap();
            let f = tape.sum_sq(f).unwrap();
            let g = tape.lse_rows(v).unwrap();
            let g = tape.sum(g).unwrap();
            let f = tape.scale(f, wa).unwrap();
            let g = tape.scale(g, wb).unwrap();
            let total = tape.add(f, g).unwrap();
            tape.backward(total).unwrap();
            tape.grad(v).unwrap().to_vec()
        };
        let combined = grad_of(a, b);
        let (gf, gg) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0));
        for i in 0..combined.len() {
            prop_assert!((combined[i] - (a * gf[i] + b * gg[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn k_logit_forms_match_explicit_softmax(rows in prop::collection::vec(logits(10), 1..6), seed in any::<u64>()) {
        use rand::Rng;
        let n = rows.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..=10)).collect();
        let x = Tensor::matrix(n, 10, rows.concat()).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(&x);
        let c1 = losses::loss_c1(&mut tape, v, &labels).unwrap();
        let c3 = losses::loss_c3(&mut tape, v).unwrap();
        let c4 = losses::loss_c4(&mut tape, v).unwrap();
        let (mut e1, mut e3, mut e4) = (0.0, 0.0, 0.0);
        for (r, &y) in rows.iter().zip(&labels) {
            let p = explicit_k_plus_one(r);
            let real: f64 = p[..10].iter().sum();
            e1 -= (p[y - 1] / real).ln();
            e3 -= real.ln();
            e4 -= p[10].ln();
        }
        let nf = n as f64;
        prop_assert!((tape.scalar(c1) - e1 / nf).abs() < 1e-10);
        prop_assert!((tape.scalar(c3) - e3 / nf).abs() < 1e-10);
        prop_assert!((tape.scalar(c4) - e4 / nf).abs() < 1e-10);
    }

    #[test]
    fn classifier_losses_are_non_negative(rows in prop::collection::vec(logits(3), 1..5)) {
        let n = rows.len();
        let x = Tensor::matrix(n, 3, rows.concat()).unwrap();
        let labels = vec![1; n];
        let mut tape = Tape::new();
        let v = tape.constant(&x);
        for loss in [
            losses::loss_c1(&mut tape, v, &labels).unwrap(),
            losses::loss_c2(&mut tape, v, &labels).unwrap(),
            losses::loss_c3(&mut tape, v).unwrap(),
            losses::loss_c4(&mut tape, v).unwrap(),
        ] {
            prop_assert!(tape.scalar(loss) >= 0.0);
        }
    }

    #[test]
    fn weight_norm_ignores_direction_scale(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = WeightNormDense::glorot(5, 4, &mut rng);
        let mut scaled = layer.clone();
        for v in scaled.direction.data_mut() {
            *v *= c;
        }
        let a = layer.effective_weight().unwrap();
        let b = scaled.effective_weight().unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn jsd_symmetric_non_negative(p in simplex(8), q in simplex(8)) {
        let a = theory::jsd(&p, &q).unwrap();
        let b = theory::jsd(&q, &p).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a >= -1e-15);
        prop_assert!(theory::jsd(&p, &p).unwrap().abs() < 1e-12);
        if theory::total_variation(&p, &q).unwrap() > 1e-3 {
            prop_assert!(a > 0.0);
        }
    }

    #[test]
    fn optimal_discriminator_lies_in_unit_interval(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pl = CategoricalJoint::random(5, 3, 0.3, &mut rng).unwrap();
        let pg = CategoricalJoint::random(5, 3, 0.3, &mut rng).unwrap();
        let pc = CategoricalJoint::random(5, 3, 0.3, &mut rng).unwrap();
        for d in theory::optimal_discriminator(&pl, &pg, &pc).unwrap().into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }

    #[test]
    fn em_history_never_increases(seed in any::<u64>(), nx in 2usize..5, ny in 2usize..4, ng in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = EmProblem::random(nx, ny, ng, &mut rng).unwrap();
        let start = EmState::random(&problem, 2, &mut rng).unwrap();
        let run = theory::em_iterate(&problem, &start, 20).unwrap();
        prop_assert!(theory::max_increase(&run.history) <= 1e-12);
        prop_assert!(run.history.iter().all(|&v| v.is_finite() && v >= -1e-15));
        prop_assert_eq!(run, theory::em_iterate(&problem, &start, 20).unwrap());
    }

    #[test]
    fn kl_chain_rule_holds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = CategoricalJoint::random(4, 6, 0.2, &mut rng).unwrap();
        let q = CategoricalJoint::random(4, 6, 0.0, &mut rng).unwrap();
        prop_assert!(theory::kl_chain_check(p.probs(), q.probs(), 4, 6).unwrap() < 1e-12);
    }

    #[test]
    fn stratified_split_partitions(seed in any::<u64>(), per_class in 1usize..6) {
        let centers = vec![vec![0.2, 0.2], vec![0.8, 0.2], vec![0.5, 0.8]];
        let ds = make_gauss_mixture(60, &centers, 0.05, seed).unwrap();
        let s = stratified_split(&ds, 3 * per_class, seed).unwrap();
        let mut all: Vec<usize> = s.labeled.iter().chain(&s.unlabeled).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..60).collect::<Vec<_>>());
        let labeled = ds.subset(&s.labeled).unwrap();
        prop_assert_eq!(labeled.class_counts(), vec![per_class; 3]);
    }

    #[test]
    fn epoch_batches_partition(n in 1usize..300, bs in 1usize..64, seed in any::<u64>(), epoch in 0u64..100) {
        let idx: Vec<usize> = (0..n).collect();
        let batches = epoch_batches(&idx, bs, seed, epoch).unwrap();
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, idx);
        prop_assert_eq!(batches, epoch_batches(&(0..n).collect::<Vec<_>>(), bs, seed, epoch).unwrap());
    }

    #[test]
    fn aggregate_ignores_run_order(mut acc in prop::collection::vec(0.0f64..1.0, 2..12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let a = aggregate_runs(&acc).unwrap();
        acc.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = aggregate_runs(&acc).unwrap();
        prop_assert!((a.mean - b.mean).abs() < 1e-12);
        prop_assert!((a.std - b.std).abs() < 1e-12);
        prop_assert_eq!(a.format_percent(), b.format_percent());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn eval_forward_is_deterministic(seed in any::<u64>(), x in prop::collection::vec(0.0f64..1.0, 8)) {
        let model = FourPlayerModel::build(&ModelConfig::synthetic(2), seed).unwrap();
        let xs = Tensor::matrix(4, 2, x).unwrap();
        prop_assert_eq!(model.classifier.logits(&xs).unwrap(), model.classifier.logits(&xs).unwrap());
        let z = Tensor::matrix(4, 2, vec![0.1, 0.9, 0.3, 0.4, 0.5, 0.5, 0.7, 0.2]).unwrap();
        let y = one_hot(&[1, 2, 1, 2], 2).unwrap();
        prop_assert_eq!(model.good_gen.sample(&z, Some(&y)).unwrap(), model.good_gen.sample(&z, Some(&y)).unwrap());
        prop_assert_eq!(model.bad_gen.sample(&z, None).unwrap(), model.bad_gen.sample(&z, None).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = |rng: &mut ChaCha8Rng| {
            let mut tape = Tape::new();
            let xv = tape.constant(&xs);
            let yv = tape.constant(&y);
            let out = model.discriminator.forward(&mut tape, xv, yv, Mode::Eval, rng, false).unwrap();
            tape.tensor(out.probs)
        };
        prop_assert_eq!(probs(&mut rng), probs(&mut rng));
    }

    #[test]
    fn eval_noise_is_identity(x in prop::collection::vec(-1.0f64..1.0, 6), seed in any::<u64>()) {
        let t = Tensor::matrix(2, 3, x).unwrap();
        let spec = NoiseSpec { gaussian_sigma: 0.5, dropout_rate: 0.3 };
        let mut tape = Tape::new();
        let v = tape.constant(&t);
        let out = spec.forward(&mut tape, v, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(tape.tensor(out), t.clone());
        let a = Activation::LeakyRelu(0.2).apply(&mut tape, v).unwrap();
        let expect: Vec<f64> = t.data().iter().map(|&x| if x > 0.0 { x } else { 0.2 * x }).collect();
        prop_assert_eq!(tape.value(a), &expect[..]);
    }
}

#[test]
fn dataset_subset_keeps_labels() {
    let ds = Dataset::new(Tensor::matrix(3, 1, vec![0.0, 0.5, 1.0]).unwrap(), vec![1, 2, 1], 2).unwrap();
    let s = ds.subset(&[2, 1]).unwrap();
    assert_eq!(s.labels, vec![1, 2]);
    assert_eq!(s.images.data(), &[1.0, 0.5]);
}
