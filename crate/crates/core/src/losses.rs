//! The four players' objectives, written over `K` classifier logits with the
//! fake-class logit pinned at zero.
//!
//! With `s = LSE(l)`, the `(K+1)`-way cross-entropies reduce to
//! `s − l_y` (labeled), `softplus(s) − s` (unlabeled is real) and
//! `softplus(s)` (bad sample is fake). All functions record onto a tape so the
//! caller can back-propagate into whichever player owns the inputs.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Weights of the classifier objective `c1 + λ0·c2 + λ1·c3 + λ2·c4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda0: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for w in [self.lambda0, self.lambda1, self.lambda2] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::domain("loss_weights", "weights must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// `c1 + λ0·c2 + λ1·c3 + λ2·c4` on plain numbers.
    pub fn combine(&self, c: [f64; 4]) -> f64 {
        c[0] + self.lambda0 * c[1] + self.lambda1 * c[2] + self.lambda2 * c[3]
    }
}

fn check_probs(op: &'static str, tape: &Tape, p: Var, zero_ok: bool, one_ok: bool) -> Result<()> {
    for &v in tape.value(p) {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(op, "probability outside [0, 1]"));
        }
        if (v == 0.0 && !zero_ok) || (v == 1.0 && !one_ok) {
            return Err(Error::domain(op, "probability makes a log term infinite"));
        }
    }
    Ok(())
}

/// `−mean log p`.
fn neg_mean_log(tape: &mut Tape, p: Var) -> Result<Var> {
    let l = tape.log(p)?;
    let m = tape.mean(l)?;
    tape.neg(m)
}

/// `−mean log(1 − p)`.
fn neg_mean_log1m(tape: &mut Tape, p: Var) -> Result<Var> {
    let q = tape.neg(p)?;
    let q = tape.add_scalar(q, 1.0)?;
    neg_mean_log(tape, q)
}

/// Non-saturating good-generator loss `−mean log D(x_gG, y_gG)`.
pub fn loss_gg(tape: &mut Tape, d_fake: Var) -> Result<Var> {
    check_probs("loss_gG", tape, d_fake, false, true)?;
    neg_mean_log(tape, d_fake)
}

/// `−mean log d_real − ½ mean log(1 − d_gG) − ½ mean log(1 − d_C)`.
pub fn loss_d(tape: &mut Tape, d_real: Var, d_gg: Var, d_c: Var) -> Result<Var> {
    check_probs("loss_D", tape, d_real, false, true)?;
    check_probs("loss_D", tape, d_gg, true, false)?;
    check_probs("loss_D", tape, d_c, true, false)?;
    let real = neg_mean_log(tape, d_real)?;
    let gg = neg_mean_log1m(tape, d_gg)?;
    let c = neg_mean_log1m(tape, d_c)?;
    let fake = tape.add(gg, c)?;
    let fake = tape.scale(fake, 0.5)?;
    tape.add(real, fake)
}

fn check_logits(op: &'static str, tape: &Tape, logits: Var) -> Result<usize> {
    let shape = tape.shape(logits);
    if shape.len() != 2 || shape[1] < 2 {
        return Err(Error::domain(op, "logits must be batch × K with K ≥ 2"));
    }
    Ok(shape[1])
}

/// Labeled cross-entropy `mean(LSE(l) − l_y)` for 1-based labels.
pub fn loss_c1(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let k = check_logits("loss_C1", tape, logits)?;
    if labels.iter().any(|&y| y == 0 || y > k) {
        return Err(Error::domain("loss_C1", "label outside 1..=K"));
    }
    let idx: Vec<usize> = labels.iter().map(|y| y - 1).collect();
    let s = tape.lse_rows(logits)?;
    let ly = tape.pick(logits, &idx)?;
    let d = tape.sub(s, ly)?;
    tape.mean(d)
}

/// Same contract as [`loss_c1`], applied to good-generator pairs.
pub fn loss_c2(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    loss_c1(tape, logits, labels)
}

/// `−mean log p(y ≤ K | x) = mean(softplus(LSE) − LSE)` on unlabeled data.
pub fn loss_c3(tape: &mut Tape, logits: Var) -> Result<Var> {
    check_logits("loss_C3", tape, logits)?;
    let s = tape.lse_rows(logits)?;
    let sp = tape.softplus(s)?;
    let d = tape.sub(sp, s)?;
    tape.mean(d)
}

/// `−mean log p(y = K+1 | x) = mean(softplus(LSE))` on bad-generator samples.
pub fn loss_c4(tape: &mut Tape, logits: Var) -> Result<Var> {
    check_logits("loss_C4", tape, logits)?;
    let s = tape.lse_rows(logits)?;
    let sp = tape.softplus(s)?;
    tape.mean(sp)
}

/// `c1 + λ0·c2 + λ1·c3 + λ2·c4` on the tape; `lambda0` is passed separately
/// so the caller can gate it.
pub fn loss_c_total(tape: &mut Tape, c: [Var; 4], lambda0: f64, w: &LossWeights) -> Result<Var> {
    let mut total = c[0];
    for (term, weight) in [(c[1], lambda0), (c[2], w.lambda1), (c[3], w.lambda2)] {
        let t = tape.scale(term, weight)?;
        total = tape.add(total, t)?;
    }
    Ok(total)
}

/// `(1/(N(N−1))) Σ_{i≠j} cos²(f_i, f_j)` over the rows of a feature batch.
pub fn pull_away(tape: &mut Tape, features: Var) -> Result<Var> {
    let shape = tape.shape(features);
    if shape.len() != 2 || shape[0] < 2 {
        return Err(Error::domain("pull_away", "needs a batch of at least 2 feature rows"));
    }
    let n = shape[0] as f64;
    let unit = tape.row_normalize(features)?;
    let gram = tape.matmul_bt(unit, unit)?;
    let total = tape.sum_sq(gram)?;
    let off = tape.add_scalar(total, -n)?;
    tape.scale(off, 1.0 / (n * (n - 1.0)))
}

/// `‖mean f_u − mean f_bG‖²`.
pub fn feature_matching(tape: &mut Tape, f_unlabeled: Var, f_bad: Var) -> Result<Var> {
    let (su, sb) = (tape.shape(f_unlabeled), tape.shape(f_bad));
    if su.len() != 2 || sb.len() != 2 || su[1] != sb[1] {
        return Err(Error::shape("feature_matching", su, sb));
    }
    let mu = tape.mean_rows(f_unlabeled)?;
    let mb = tape.mean_rows(f_bad)?;
    let d = tape.sub(mu, mb)?;
    tape.sum_sq(d)
}

/// Bad-generator objective: weighted pull-away entropy proxy plus feature
/// matching. A zero weight skips the proxy entirely.
pub fn loss_bg(tape: &mut Tape, f_unlabeled: Var, f_bad: Var, pull_away_weight: f64) -> Result<Var> {
    let fm = feature_matching(tape, f_unlabeled, f_bad)?;
    if pull_away_weight == 0.0 {
        return Ok(fm);
    }
    let pt = pull_away(tape, f_bad)?;
    let pt = tape.scale(pt, pull_away_weight)?;
    tape.add(pt, fm)
}

/// `p(y = K+1 | x) = 1 / (1 + Σ exp l)` per row.
pub fn p_fake(logits: &Tensor) -> Result<Vec<f64>> {
    if logits.shape().len() != 2 {
        return Err(Error::domain("p_fake", "logits must be batch × K"));
    }
    (0..logits.rows())
        .map(|i| kernels::lse(logits.row(i)).map(|s| kernels::sigmoid(-s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheck};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_of(f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
        let mut tape = Tape::new();
        let v = f(&mut tape)?;
        Ok(tape.scalar(v))
    }

    fn probs(tape: &mut Tape, p: &[f64]) -> Var {
        tape.constant(&Tensor::vector(p.to_vec()))
    }

    fn logits(tape: &mut Tape, rows: usize, data: Vec<f64>) -> Var {
        let k = data.len() / rows;
        tape.constant(&Tensor::matrix(rows, k, data).unwrap())
    }

    #[test]
    fn loss_gg_examples() {
        let v = |p: &[f64]| scalar_of(|t| {
            let d = probs(t, p);
            loss_gg(t, d)
        });
        assert_eq!(v(&[1.0, 1.0]).unwrap(), 0.0);
        assert!((v(&[0.5]).unwrap() - libm::log(2.0)).abs() < 1e-15);
        assert!((v(&[0.25, 0.5]).unwrap() - 1.039720770839918).abs() < 1e-12);
        assert!(matches!(v(&[0.0]), Err(Error::Domain { .. })));
        assert!(matches!(v(&[1.5]), Err(Error::Domain { .. })));
    }

    #[test]
    fn loss_d_examples() {
        let v = |r: &[f64], g: &[f64], c: &[f64]| scalar_of(|t| {
            let (r, g, c) = (probs(t, r), probs(t, g), probs(t, c));
            loss_d(t, r, g, c)
        });
        assert_eq!(v(&[1.0], &[0.0], &[0.0]).unwrap(), 0.0);
        assert!((v(&[0.5], &[0.5], &[0.5]).unwrap() - 2.0 * libm::log(2.0)).abs() < 1e-15);
        assert!(v(&[0.5], &[1.0], &[0.5]).is_err());
        assert!(v(&[-0.1], &[0.5], &[0.5]).is_err());
    }

    #[test]
    fn loss_d_swapped_roles_follow_the_formula() {
        let (a, b) = (0.8, 0.3);
        let d = v_d(a, b, b);
        let swapped = v_d(b, a, a);
        let expect = -libm::log(b) - libm::log(1.0 - a) + libm::log(a) + libm::log(1.0 - b);
        assert!((swapped - d - expect).abs() < 1e-14);
    }

    fn v_d(r: f64, g: f64, c: f64) -> f64 {
        scalar_of(|t| {
            let (r, g, c) = (probs(t, &[r]), probs(t, &[g]), probs(t, &[c]));
            loss_d(t, r, g, c)
        })
        .unwrap()
    }

    #[test]
    fn classifier_losses_on_zero_logits() {
        let c1 = scalar_of(|t| {
            let l = logits(t, 1, vec![0.0; 10]);
            loss_c1(t, l, &[4])
        });
        assert!((c1.unwrap() - libm::log(10.0)).abs() < 1e-12);
        let c3 = scalar_of(|t| {
            let l = logits(t, 1, vec![0.0; 10]);
            loss_c3(t, l)
        });
        assert!((c3.unwrap() - libm::log(1.1)).abs() < 1e-12);
        let c4 = scalar_of(|t| {
            let l = logits(t, 1, vec![0.0; 10]);
            loss_c4(t, l)
        });
        assert!((c4.unwrap() - libm::log(11.0)).abs() < 1e-12);
    }

    #[test]
    fn classifier_losses_at_confident_logits() {
        let mut l = vec![-30.0; 10];
        l[2] = 30.0;
        let c1 = scalar_of(|t| {
            let v = logits(t, 1, l.clone());
            loss_c1(t, v, &[3])
        });
        assert!(c1.unwrap().abs() < 1e-12);
        let c3 = scalar_of(|t| {
            let v = logits(t, 1, l.clone());
            loss_c3(t, v)
        });
        assert!(c3.unwrap().abs() < 1e-12);
        let c4 = scalar_of(|t| {
            let v = logits(t, 1, vec![-30.0; 10]);
            loss_c4(t, v)
        });
        assert!(c4.unwrap().abs() < 1e-11);
    }

    #[test]
    fn loss_c1_rejects_bad_labels() {
        for y in [0, 11] {
            let r = scalar_of(|t| {
                let v = logits(t, 1, vec![0.0; 10]);
                loss_c1(t, v, &[y])
            });
            assert!(matches!(r, Err(Error::Domain { .. })));
        }
    }

    #[test]
    fn total_combines_components() {
        let w = LossWeights::default();
        assert_eq!(w.combine([1.0; 4]), 4.0);
        let gated = LossWeights { lambda0: 0.0, ..w };
        assert_eq!(gated.combine([1.0, 5.0, 1.0, 1.0]), 3.0);
        let w = LossWeights {
            lambda0: 0.5,
            lambda1: 2.0,
            lambda2: 1.0,
        };
        let (a, b, c, d) = (0.3, 1.7, 0.9, 2.2);
        assert_eq!(w.combine([a, b, c, d]), a + 0.5 * b + 2.0 * c + d);
        let on_tape = scalar_of(|t| {
            let vs = [a, b, c, d].map(|x| t.constant(&Tensor::scalar(x)));
            loss_c_total(t, vs, w.lambda0, &w)
        });
        assert!((on_tape.unwrap() - w.combine([a, b, c, d])).abs() < 1e-15);
    }

    #[test]
    fn pull_away_examples() {
        let pa = |rows: usize, data: Vec<f64>| scalar_of(|t| {
            let f = logits(t, rows, data);
            pull_away(t, f)
        });
        assert!((pa(2, vec![1.0, 2.0, 1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(pa(3, eye).unwrap().abs() < 1e-12);
        for n in [2, 5, 17] {
            let copies: Vec<f64> = (0..n).flat_map(|_| [0.3, -1.2, 2.0]).collect();
            assert!((pa(n, copies).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(pa(2, vec![0.0, 0.0, 1.0, 1.0]), Err(Error::Domain { .. })));
    }

    #[test]
    fn feature_matching_examples() {
        let fm = |u: Vec<f64>, b: Vec<f64>| scalar_of(|t| {
            let fu = logits(t, 2, u);
            let fb = logits(t, 2, b);
            feature_matching(t, fu, fb)
        });
        assert_eq!(fm(vec![1.0, 2.0, 3.0, 4.0], vec![3.0, 2.0, 1.0, 4.0]).unwrap(), 0.0);
        assert_eq!(fm(vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!(fm(vec![1.0; 4], vec![1.0; 6]).is_err());
    }

    #[test]
    fn p_fake_examples() {
        let t = Tensor::matrix(1, 10, vec![0.0; 10]).unwrap();
        assert!((p_fake(&t).unwrap()[0] - 1.0 / 11.0).abs() < 1e-15);
        let mut l = vec![0.0; 10];
        l[0] = 30.0;
        let t = Tensor::matrix(1, 10, l.clone()).unwrap();
        let pf = p_fake(&t).unwrap()[0];
        assert!(pf < 1e-12);
        let real: f64 = l.iter().map(|v| libm::exp(*v)).sum::<f64>() / (1.0 + l.iter().map(|v| libm::exp(*v)).sum::<f64>());
        assert!((pf + real - 1.0).abs() < 1e-12);
    }

    #[test]
    fn losses_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rand_t = |r: usize, c: usize, lo: f64, hi: f64| {
            Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
        };
        let l = rand_t(4, 5, -3.0, 3.0);
        let fu = rand_t(4, 3, -1.0, 1.0);
        let fb = rand_t(3, 3, -1.0, 1.0);
        let p = rand_t(4, 1, 0.05, 0.95);
        let q = rand_t(3, 1, 0.05, 0.95);
        let s = rand_t(2, 1, 0.05, 0.95);
        let cfg = GradCheck::default();
        let w = LossWeights {
            lambda0: 0.7,
            lambda1: 1.3,
            lambda2: 0.4,
        };
        type Check = (Vec<Tensor>, fn(&mut Tape, &[Var]) -> Result<Var>);
        let checks: Vec<Check> = vec![
            (vec![l.clone()], |t, v| loss_c1(t, v[0], &[1, 5, 2, 2])),
            (vec![l.clone()], |t, v| loss_c3(t, v[0])),
            (vec![l.clone()], |t, v| loss_c4(t, v[0])),
            (vec![p.clone()], |t, v| loss_gg(t, v[0])),
            (vec![p.clone(), q.clone(), s.clone()], |t, v| loss_d(t, v[0], v[1], v[2])),
            (vec![fu.clone(), fb.clone()], |t, v| loss_bg(t, v[0], v[1], 0.1)),
            (vec![fb.clone()], |t, v| pull_away(t, v[0])),
        ];
        for (i, (inputs, f)) in checks.into_iter().enumerate() {
            let r = check_gradients(&inputs, f, &cfg).unwrap();
            assert!(r.passed(cfg.tolerance), "case {i}: {r:?}");
        }
        let r = check_gradients(
            &[l],
            |t, v| {
                let c1 = loss_c1(t, v[0], &[3, 3, 1, 4])?;
                let c2 = loss_c2(t, v[0], &[2, 5, 5, 1])?;
                let c3 = loss_c3(t, v[0])?;
                let c4 = loss_c4(t, v[0])?;
                loss_c_total(t, [c1, c2, c3, c4], w.lambda0, &w)
            },
            &cfg,
        )
        .unwrap();
        assert!(r.passed(cfg.tolerance), "{r:?}");
    }
}
