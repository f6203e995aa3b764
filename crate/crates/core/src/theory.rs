//! Exact checks of the game's theory on finite categorical distributions.
//!
//! Every function is pure. Tables are flat row-major `|X| × |Y|` arrays and
//! `0 · log 0` is taken as 0 throughout.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::kernels::{lse, sigmoid, softmax_into, softplus};

/// Normalization tolerance for probability tables.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// `t · log(t / s)` with `0 · log(0 / s) = 0`.
fn xlogy_ratio(t: f64, s: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * libm::log(t / s)
    }
}

fn check_distribution(op: &'static str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::domain(op, "empty support"));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::domain(op, "probabilities must be finite and non-negative"));
    }
    let total: f64 = p.iter().sum();
    if libm::fabs(total - 1.0) > NORMALIZATION_TOL {
        return Err(Error::domain(op, "probabilities must sum to 1"));
    }
    Ok(())
}

/// A joint distribution `p(x, y)` on a finite `|X| × |Y|` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalJoint {
    rows: usize,
    cols: usize,
    p: Vec<f64>,
}

impl CategoricalJoint {
    pub fn new(rows: usize, cols: usize, p: Vec<f64>) -> Result<Self> {
        if rows * cols != p.len() {
            return Err(Error::shape("categorical", &[rows, cols], &[p.len()]));
        }
        check_distribution("categorical", &p)?;
        Ok(CategoricalJoint { rows, cols, p })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(rows: usize, cols: usize, w: Vec<f64>) -> Result<Self> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || !total.is_finite() || w.iter().any(|&v| v < 0.0) {
            return Err(Error::domain("categorical", "weights must be non-negative with a positive sum"));
        }
        Self::new(rows, cols, w.into_iter().map(|v| v / total).collect())
    }

    pub fn uniform(rows: usize, cols: usize) -> Result<Self> {
        Self::from_weights(rows, cols, vec![1.0; rows * cols])
    }

    /// Random table with exponential weights; each cell is zeroed with
    /// probability `sparsity` (one cell always keeps its mass).
    pub fn random(rows: usize, cols: usize, sparsity: f64, rng: &mut dyn RngCore) -> Result<Self> {
        let n = rows * cols;
        if n == 0 {
            return Err(Error::domain("categorical", "empty support"));
        }
        let keep = rng.random_range(0..n);
        let w = (0..n)
            .map(|i| {
                let v: f64 = Exp1.sample(rng);
                if i != keep && rng.random::<f64>() < sparsity {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        Self::from_weights(rows, cols, w)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.p[x * self.cols + y]
    }

    /// `w·self + (1 − w)·other`.
    pub fn mix(&self, w: f64, other: &CategoricalJoint) -> Result<Self> {
        self.same_support("mix", other)?;
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::domain("mix", "weight must lie in [0, 1]"));
        }
        let p = self.p.iter().zip(&other.p).map(|(a, b)| w * a + (1.0 - w) * b).collect();
        Ok(CategoricalJoint {
            rows: self.rows,
            cols: self.cols,
            p,
        })
    }

    /// `p(x)`.
    pub fn marginal_x(&self) -> Vec<f64> {
        self.p.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    /// `p(y | x)`; rows with zero mass are `None`.
    pub fn conditional(&self) -> Vec<Option<Vec<f64>>> {
        self.p
            .chunks(self.cols)
            .map(|r| {
                let m: f64 = r.iter().sum();
                (m > 0.0).then(|| r.iter().map(|v| v / m).collect())
            })
            .collect()
    }

    fn same_support(&self, op: &'static str, other: &CategoricalJoint) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::shape(op, &[self.rows, self.cols], &[other.rows, other.cols]));
        }
        Ok(())
    }
}

/// `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("total_variation", &[p.len()], &[q.len()]));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| libm::fabs(a - b)).sum::<f64>())
}

/// `KL(p ‖ q) = Σ p log(p/q)`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("kl", &[p.len()], &[q.len()]));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 && b <= 0.0 {
            return Err(Error::domain("kl", "p is not absolutely continuous with respect to q"));
        }
        total += xlogy_ratio(a, b);
    }
    Ok(total)
}

/// Jensen-Shannon divergence in nats.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("jsd", &[p.len()], &[q.len()]));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(0.5 * kl(p, &m)? + 0.5 * kl(q, &m)?)
}

/// Residual of the KL chain rule on joints over `X × Z`, given row-major
/// `|X| × |Z|`:
/// `|KL(P(X,Z)‖Q(X,Z)) − KL(P(X)‖Q(X)) − E_{P(x)} KL(P(Z|x)‖Q(Z|x))|`.
pub fn kl_chain_check(p: &[f64], q: &[f64], nx: usize, nz: usize) -> Result<f64> {
    if p.len() != nx * nz || q.len() != nx * nz {
        return Err(Error::shape("kl_chain", &[nx, nz], &[p.len(), q.len()]));
    }
    check_distribution("kl_chain", p)?;
    check_distribution("kl_chain", q)?;
    let joint = kl(p, q)?;
    let px: Vec<f64> = p.chunks(nz).map(|r| r.iter().sum()).collect();
    let qx: Vec<f64> = q.chunks(nz).map(|r| r.iter().sum()).collect();
    let marginal = kl(&px, &qx)?;
    let mut conditional = 0.0;
    for x in 0..nx {
        if px[x] == 0.0 {
            continue;
        }
        let pz: Vec<f64> = p[x * nz..(x + 1) * nz].iter().map(|v| v / px[x]).collect();
        let qz: Vec<f64> = q[x * nz..(x + 1) * nz].iter().map(|v| v / qx[x]).collect();
        conditional += px[x] * kl(&pz, &qz)?;
    }
    Ok(libm::fabs(joint - marginal - conditional))
}

/// `p_½ = ½ p_gG + ½ p_C`.
pub fn half_mixture(p_gg: &CategoricalJoint, p_c: &CategoricalJoint) -> Result<CategoricalJoint> {
    p_gg.mix(0.5, p_c)
}

/// Per-cell optimal discriminator `p_l / (p_l + p_½)`; `None` where the
/// denominator vanishes.
pub fn optimal_discriminator(
    p_l: &CategoricalJoint,
    p_gg: &CategoricalJoint,
    p_c: &CategoricalJoint,
) -> Result<Vec<Option<f64>>> {
    p_l.same_support("optimal_discriminator", p_gg)?;
    let half = half_mixture(p_gg, p_c)?;
    Ok(p_l
        .p
        .iter()
        .zip(&half.p)
        .map(|(&l, &h)| (l + h > 0.0).then(|| l / (l + h)))
        .collect())
}

/// One cell of the discriminator loss: `−p_l log d − p_½ log(1 − d)`.
pub fn discriminator_cell_loss(p_l: f64, p_half: f64, d: f64) -> f64 {
    let pos = if p_l == 0.0 { 0.0 } else { -p_l * libm::log(d) };
    let neg = if p_half == 0.0 { 0.0 } else { -p_half * libm::log(1.0 - d) };
    pos + neg
}

/// Golden-section minimizer of a unimodal function on `[lo, hi]`.
pub fn golden_section_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Best response of D found by golden-section search on each cell's loss
/// (normalized by the cell mass); `None` on cells with no mass.
pub fn numeric_discriminator(
    p_l: &CategoricalJoint,
    p_gg: &CategoricalJoint,
    p_c: &CategoricalJoint,
) -> Result<Vec<Option<f64>>> {
    p_l.same_support("numeric_discriminator", p_gg)?;
    let half = half_mixture(p_gg, p_c)?;
    Ok(p_l
        .p
        .iter()
        .zip(&half.p)
        .map(|(&l, &h)| {
            let m = l + h;
            (m > 0.0).then(|| golden_section_min(|d| discriminator_cell_loss(l / m, h / m, d), 0.0, 1.0, 1e-11))
        })
        .collect())
}

/// Terms of the value function after plugging in the optimal D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueFunction {
    /// `−log 4 + 2·JSD(p_l, p_½)`.
    pub adversarial: f64,
    /// `−E_{p_l} log p_C(y|x)`.
    pub c1: f64,
    /// `−E_{p_gG} log p_C(y|x)`.
    pub c2: f64,
    pub total: f64,
}

fn cross_entropy_conditional(p: &CategoricalJoint, p_c: &CategoricalJoint) -> f64 {
    let cond = p_c.conditional();
    let mut total = 0.0;
    for (x, row) in cond.iter().enumerate() {
        for y in 0..p.cols {
            let mass = p.get(x, y);
            if mass == 0.0 {
                continue;
            }
            match row {
                Some(c) if c[y] > 0.0 => total -= mass * libm::log(c[y]),
                _ => return f64::INFINITY,
            }
        }
    }
    total
}

/// Value function of the categorical game with the classifier terms of the
/// real classes; infinite when C gives zero probability to observed pairs.
pub fn value_function(
    p_l: &CategoricalJoint,
    p_gg: &CategoricalJoint,
    p_c: &CategoricalJoint,
) -> Result<ValueFunction> {
    let half = half_mixture(p_gg, p_c)?;
    p_l.same_support("value_function", &half)?;
    let adversarial = -libm::log(4.0) + 2.0 * jsd(&p_l.p, &half.p)?;
    let c1 = cross_entropy_conditional(p_l, p_c);
    let c2 = cross_entropy_conditional(p_gg, p_c);
    Ok(ValueFunction {
        adversarial,
        c1,
        c2,
        total: adversarial + c1 + c2,
    })
}

/// `−L_D` at the given discriminator, summed cell by cell. With `D*` this is
/// a second route to [`ValueFunction::adversarial`].
pub fn discriminator_value(
    p_l: &CategoricalJoint,
    p_gg: &CategoricalJoint,
    p_c: &CategoricalJoint,
    d: &[Option<f64>],
) -> Result<f64> {
    let half = half_mixture(p_gg, p_c)?;
    if d.len() != p_l.p.len() {
        return Err(Error::shape("discriminator_value", &[p_l.p.len()], &[d.len()]));
    }
    let mut total = 0.0;
    for ((&l, &h), dv) in p_l.p.iter().zip(&half.p).zip(d) {
        if let Some(v) = dv {
            total -= discriminator_cell_loss(l, h, *v);
        }
    }
    Ok(total)
}

/// Residuals of the two equilibrium conditions:
/// `max|p_l − ½p_gG − ½p_C|` and `max|p_C − β p_l − (1 − β) p_gG|`.
pub fn equilibrium_residuals(
    p_l: &CategoricalJoint,
    p_gg: &CategoricalJoint,
    p_c: &CategoricalJoint,
    beta: f64,
) -> Result<(f64, f64)> {
    let half = half_mixture(p_gg, p_c)?;
    let p_beta = p_l.mix(beta, p_gg)?;
    let max_abs = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| libm::fabs(x - y)).fold(0.0, f64::max);
    Ok((max_abs(&p_l.p, &half.p), max_abs(&p_c.p, &p_beta.p)))
}

/// Objective minimized over the generator and classifier joints:
/// `2·JSD(p_l, ½g + ½c) + KL(β p_l + (1 − β) g ‖ c)`.
pub fn equilibrium_objective(p_l: &[f64], g: &[f64], c: &[f64], beta: f64) -> Result<f64> {
    let m: Vec<f64> = g.iter().zip(c).map(|(a, b)| 0.5 * (a + b)).collect();
    let pb: Vec<f64> = p_l.iter().zip(g).map(|(a, b)| beta * a + (1.0 - beta) * b).collect();
    Ok(2.0 * jsd(p_l, &m)? + kl(&pb, c)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig {
    pub step: f64,
    pub max_steps: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub good_gen: Vec<f64>,
    pub classifier: Vec<f64>,
    pub objective: f64,
    pub steps: usize,
}

impl Equilibrium {
    /// Larger of the two total-variation distances to `p_l`.
    pub fn distance_to(&self, p_l: &[f64]) -> Result<f64> {
        Ok(total_variation(&self.good_gen, p_l)?.max(total_variation(&self.classifier, p_l)?))
    }
}

/// Multiplicative update `x ← x·exp(−η ∇) / Z`, with `η` capped so no
/// coordinate shrinks by more than a factor `e` in one step.
fn exponentiated_step(x: &mut [f64], grad: &[f64], step: f64) {
    let shift = grad.iter().copied().fold(f64::INFINITY, f64::min);
    let range = grad.iter().copied().fold(f64::NEG_INFINITY, f64::max) - shift;
    let eta = if range * step > 1.0 { 1.0 / range } else { step };
    let mut total = 0.0;
    for (v, g) in x.iter_mut().zip(grad) {
        *v *= libm::exp(-eta * (g - shift));
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}

/// Block coordinate descent on [`equilibrium_objective`]: alternating
/// exponentiated-gradient steps on `g` and `c` from strictly positive
/// starts. Stops once both are within `tolerance` of `p_l` in total
/// variation, or after `max_steps` sweeps.
pub fn equilibrium_search(
    p_l: &CategoricalJoint,
    g0: &CategoricalJoint,
    c0: &CategoricalJoint,
    beta: f64,
    cfg: &DescentConfig,
) -> Result<Equilibrium> {
    p_l.same_support("equilibrium", g0)?;
    p_l.same_support("equilibrium", c0)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::domain("equilibrium", "beta must lie in [0, 1]"));
    }
    if g0.p.iter().chain(&c0.p).any(|&v| v <= 0.0) {
        return Err(Error::domain("equilibrium", "starting points must have full support"));
    }
    let pl = &p_l.p;
    let (mut g, mut c) = (g0.p.clone(), c0.p.clone());
    let n = pl.len();
    let mut grad = vec![0.0; n];
    let mut steps = 0;
    while steps < cfg.max_steps {
        if total_variation(&g, pl)?.max(total_variation(&c, pl)?) < cfg.tolerance {
            break;
        }
        // ∂/∂g: ½ log(m/a) + (1 − β)(log p_β − log c + 1), with m = ½(g+c), a = ½(p_l+m).
        for i in 0..n {
            let m = 0.5 * (g[i] + c[i]);
            let a = 0.5 * (pl[i] + m);
            let pb = beta * pl[i] + (1.0 - beta) * g[i];
            let kl_term = if pb > 0.0 {
                libm::log(pb / c[i]) + 1.0
            } else {
                1.0
            };
            grad[i] = 0.5 * libm::log(m / a) + (1.0 - beta) * kl_term;
        }
        exponentiated_step(&mut g, &grad, cfg.step);
        // ∂/∂c: ½ log(m/a) − p_β / c.
        for i in 0..n {
            let m = 0.5 * (g[i] + c[i]);
            let a = 0.5 * (pl[i] + m);
            let pb = beta * pl[i] + (1.0 - beta) * g[i];
            grad[i] = 0.5 * libm::log(m / a) - pb / c[i];
        }
        exponentiated_step(&mut c, &grad, cfg.step);
        steps += 1;
    }
    let objective = equilibrium_objective(pl, &g, &c, beta)?;
    Ok(Equilibrium {
        good_gen: g,
        classifier: c,
        objective,
        steps,
    })
}

/// `−Σ p_u log(1 − q) − Σ p_bG log q` over a shared point set.
pub fn fake_head_objective(p_u: &[f64], p_bg: &[f64], q: &[f64]) -> Result<f64> {
    if p_u.len() != p_bg.len() || q.len() != p_u.len() {
        return Err(Error::shape("fake_head", &[p_u.len(), p_bg.len()], &[q.len()]));
    }
    Ok(p_u
        .iter()
        .zip(p_bg)
        .zip(q)
        .map(|((&a, &b), &qi)| discriminator_cell_loss(b, a, qi))
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FakeHead {
    /// Optimal `p_C(K+1 | x)` per point; `None` for points outside both supports.
    pub p_fake: Vec<Option<f64>>,
    pub objective: f64,
}

/// Exact minimizer of `L_C3 + L_C4` over per-point Bernoulli parameters:
/// `q(x) = p_bG(x) / (p_u(x) + p_bG(x))`.
pub fn fake_head_optimum(p_u: &[f64], p_bg: &[f64]) -> Result<FakeHead> {
    check_distribution("fake_head", p_u)?;
    check_distribution("fake_head", p_bg)?;
    if p_u.len() != p_bg.len() {
        return Err(Error::shape("fake_head", &[p_u.len()], &[p_bg.len()]));
    }
    let p_fake: Vec<Option<f64>> = p_u
        .iter()
        .zip(p_bg)
        .map(|(&a, &b)| (a + b > 0.0).then(|| b / (a + b)))
        .collect();
    let q: Vec<f64> = p_fake.iter().map(|v| v.unwrap_or(0.5)).collect();
    let objective = fake_head_objective(p_u, p_bg, &q)?;
    Ok(FakeHead { p_fake, objective })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FakeHeadDescent {
    /// `p_C(K+1 | x) = sigmoid(−LSE(l))` per point at the final logits.
    pub p_fake: Vec<f64>,
    pub logits: Vec<Vec<f64>>,
    pub objective: f64,
    pub steps: usize,
}

/// Gradient descent on `K` real-class logits per point, using the K-logit
/// forms `softplus(LSE) − LSE` (unlabeled mass) and `softplus(LSE)` (bG
/// mass). The objective separates over points, so each point descends its
/// own mass-normalized term. Stops when every point is within `tolerance`
/// of the exact optimum.
pub fn fake_head_descent(
    p_u: &[f64],
    p_bg: &[f64],
    init_logits: &[Vec<f64>],
    cfg: &DescentConfig,
) -> Result<FakeHeadDescent> {
    let exact = fake_head_optimum(p_u, p_bg)?;
    if init_logits.len() != p_u.len() {
        return Err(Error::shape("fake_head_descent", &[p_u.len()], &[init_logits.len()]));
    }
    let mut logits = init_logits.to_vec();
    let mut steps = 0;
    let mut soft = Vec::new();
    let p_fake_of = |l: &[f64]| -> Result<f64> { Ok(sigmoid(-lse(l)?)) };
    loop {
        let mut worst: f64 = 0.0;
        for (l, target) in logits.iter().zip(&exact.p_fake) {
            if let Some(t) = target {
                worst = worst.max(libm::fabs(p_fake_of(l)? - t));
            }
        }
        if worst < cfg.tolerance || steps >= cfg.max_steps {
            break;
        }
        for ((l, &a), &b) in logits.iter_mut().zip(p_u).zip(p_bg) {
            let m = a + b;
            if m == 0.0 {
                continue;
            }
            let s = lse(l)?;
            // d/dLSE of [a(softplus − id) + b softplus] / m
            let dl = sigmoid(s) - a / m;
            soft.resize(l.len(), 0.0);
            softmax_into(l, &mut soft);
            for (li, si) in l.iter_mut().zip(&soft) {
                *li -= cfg.step * dl * si;
            }
        }
        steps += 1;
    }
    let mut p_fake = Vec::with_capacity(logits.len());
    let mut objective = 0.0;
    for ((l, &a), &b) in logits.iter().zip(p_u).zip(p_bg) {
        let s = lse(l)?;
        p_fake.push(sigmoid(-s));
        objective += a * (softplus(s) - s) + b * softplus(s);
    }
    Ok(FakeHeadDescent {
        p_fake,
        logits,
        objective,
        steps,
    })
}

/// Categorical semi-supervised problem for exact EM: inputs `x` with
/// weights `p(x)`, the true conditional `p(y|x)`, and a fixed kernel
/// `κ(g|x)` over generated-pair indices `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmProblem {
    pub p_x: Vec<f64>,
    /// `|X| × |Y|`, rows sum to 1.
    pub conditional: Vec<f64>,
    /// `|X| × |G|`, rows sum to 1.
    pub kernel: Vec<f64>,
    pub num_labels: usize,
    pub num_generated: usize,
}

impl EmProblem {
    pub fn num_inputs(&self) -> usize {
        self.p_x.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, ny, ng) = (self.num_inputs(), self.num_labels, self.num_generated);
        if ny == 0 || ng == 0 || self.conditional.len() != nx * ny || self.kernel.len() != nx * ng {
            return Err(Error::shape("em_problem", &[nx, ny, ng], &[self.conditional.len(), self.kernel.len()]));
        }
        check_distribution("em_problem", &self.p_x)?;
        for row in self.conditional.chunks(ny).chain(self.kernel.chunks(ng)) {
            check_distribution("em_problem", row)?;
        }
        Ok(())
    }

    /// Random problem with full-support `p(x)`, `p(y|x)` and `κ`.
    pub fn random(nx: usize, ny: usize, ng: usize, rng: &mut dyn RngCore) -> Result<Self> {
        let p = EmProblem {
            p_x: random_simplex(nx, rng),
            conditional: (0..nx).flat_map(|_| random_simplex(ny, rng)).collect(),
            kernel: (0..nx).flat_map(|_| random_simplex(ng, rng)).collect(),
            num_labels: ny,
            num_generated: ng,
        };
        p.validate()?;
        Ok(p)
    }
}

fn random_simplex(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let t: f64 = w.iter().sum();
    w.into_iter().map(|v| v / t).collect()
}

/// The three quantities of one EM step:
/// `J(θ_s)`, `J(θ_{s+1}, p_θs(Z|x))` and `J(θ_{s+1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sandwich {
    pub before: f64,
    pub bound: f64,
    pub after: f64,
}

impl Sandwich {
    /// Largest violation of `after ≤ bound ≤ before`, zero when it holds.
    pub fn violation(&self) -> f64 {
        (self.after - self.bound).max(self.bound - self.before).max(0.0)
    }
}

/// Classifier parameters θ and EM bookkeeping.
///
/// The model is `p_θ(y, u, g | x) = κ(g|x) · A[x][u] · B[(u, g)][y]` with a
/// latent pseudo label `u` and generated-pair index `g`; the latent variable
/// is `Z = (u, g)` and `p_θ(y|x)` sums it out.
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub num_latent: usize,
    /// `|X| × |U|`, rows sum to 1.
    pub assign: Vec<f64>,
    /// `(|U|·|G|) × |Y|`, rows sum to 1.
    pub emit: Vec<f64>,
    /// Posterior `p_θs(Z | x, y)` of the last E-step, `|X| × |Y| × |U| × |G|`.
    pub posterior: Vec<f64>,
    /// `KL(p(y|x) ‖ p_θ(y|x))` averaged over `p(x)`, one entry per θ visited.
    pub history: Vec<f64>,
    pub sandwiches: Vec<Sandwich>,
}

impl EmState {
    /// Random strictly positive parameters.
    pub fn random(problem: &EmProblem, num_latent: usize, rng: &mut dyn RngCore) -> Result<Self> {
        let nx = problem.num_inputs();
        let rows = num_latent * problem.num_generated;
        Self::new(
            problem,
            num_latent,
            (0..nx).flat_map(|_| random_simplex(num_latent, rng)).collect(),
            (0..rows).flat_map(|_| random_simplex(problem.num_labels, rng)).collect(),
        )
    }

    /// θ that reproduces `p(y|x)` exactly: one latent per input, `A = I` and
    /// `B[(x, g)] = p(·|x)`.
    pub fn at_truth(problem: &EmProblem) -> Result<Self> {
        let (nx, ny, ng) = (problem.num_inputs(), problem.num_labels, problem.num_generated);
        let mut assign = vec![0.0; nx * nx];
        for x in 0..nx {
            assign[x * nx + x] = 1.0;
        }
        let emit = (0..nx)
            .flat_map(|x| (0..ng).flat_map(move |_| problem.conditional[x * ny..(x + 1) * ny].iter().copied()))
            .collect();
        Self::new(problem, nx, assign, emit)
    }

    pub fn new(problem: &EmProblem, num_latent: usize, assign: Vec<f64>, emit: Vec<f64>) -> Result<Self> {
        problem.validate()?;
        let (nx, ny, ng) = (problem.num_inputs(), problem.num_labels, problem.num_generated);
        if num_latent == 0 || assign.len() != nx * num_latent || emit.len() != num_latent * ng * ny {
            return Err(Error::shape("em_state", &[nx, num_latent, ng, ny], &[assign.len(), emit.len()]));
        }
        for row in assign.chunks(num_latent).chain(emit.chunks(ny)) {
            check_distribution("em_state", row)?;
        }
        let mut state = EmState {
            num_latent,
            assign,
            emit,
            posterior: Vec::new(),
            history: Vec::new(),
            sandwiches: Vec::new(),
        };
        state.history.push(state.objective(problem)?);
        Ok(state)
    }

    /// `p_θ(y, u, g | x)` for one cell.
    fn complete(&self, problem: &EmProblem, x: usize, y: usize, u: usize, g: usize) -> f64 {
        let (ny, ng) = (problem.num_labels, problem.num_generated);
        problem.kernel[x * ng + g] * self.assign[x * self.num_latent + u] * self.emit[(u * ng + g) * ny + y]
    }

    /// `p_θ(y | x)` as a `|X| × |Y|` table.
    pub fn marginal(&self, problem: &EmProblem) -> Vec<f64> {
        let (nx, ny, ng) = (problem.num_inputs(), problem.num_labels, problem.num_generated);
        let mut out = vec![0.0; nx * ny];
        for x in 0..nx {
            for y in 0..ny {
                let mut s = 0.0;
                for u in 0..self.num_latent {
                    for g in 0..ng {
                        s += self.complete(problem, x, y, u, g);
                    }
                }
                out[x * ny + y] = s;
            }
        }
        out
    }

    /// `J(θ) = Σ_x p(x) KL(p(·|x) ‖ p_θ(·|x))`.
    pub fn objective(&self, problem: &EmProblem) -> Result<f64> {
        let ny = problem.num_labels;
        let m = self.marginal(problem);
        let mut total = 0.0;
        for (x, &px) in problem.p_x.iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            total += px * kl(&problem.conditional[x * ny..(x + 1) * ny], &m[x * ny..(x + 1) * ny])?;
        }
        Ok(total)
    }

    /// `J(θ, q) = Σ_x p(x) KL(p(y|x) q(Z|x,y) ‖ p_θ(y, Z|x))` for a posterior
    /// table laid out like [`EmState::posterior`].
    pub fn bound(&self, problem: &EmProblem, q: &[f64]) -> Result<f64> {
        let (nx, ny, ng, nu) = (problem.num_inputs(), problem.num_labels, problem.num_generated, self.num_latent);
        if q.len() != nx * ny * nu * ng {
            return Err(Error::shape("em_bound", &[nx, ny, nu, ng], &[q.len()]));
        }
        let mut total = 0.0;
        for x in 0..nx {
            let px = problem.p_x[x];
            for y in 0..ny {
                let c = problem.conditional[x * ny + y];
                if px * c == 0.0 {
                    continue;
                }
                for u in 0..nu {
                    for g in 0..ng {
                        let t = c * q[((x * ny + y) * nu + u) * ng + g];
                        if t == 0.0 {
                            continue;
                        }
                        let s = self.complete(problem, x, y, u, g);
                        if s <= 0.0 {
                            return Ok(f64::INFINITY);
                        }
                        total += px * t * libm::log(t / s);
                    }
                }
            }
        }
        Ok(total)
    }

    /// Posterior `p_θ(Z | x, y)` on every observed `(x, y)`.
    pub fn e_step(&self, problem: &EmProblem) -> Result<Vec<f64>> {
        let (nx, ny, ng, nu) = (problem.num_inputs(), problem.num_labels, problem.num_generated, self.num_latent);
        let mut q = vec![0.0; nx * ny * nu * ng];
        for x in 0..nx {
            for y in 0..ny {
                if problem.p_x[x] * problem.conditional[x * ny + y] == 0.0 {
                    continue;
                }
                let base = (x * ny + y) * nu * ng;
                let mut mass = 0.0;
                for u in 0..nu {
                    for g in 0..ng {
                        let v = self.complete(problem, x, y, u, g);
                        q[base + u * ng + g] = v;
                        mass += v;
                    }
                }
                if !(mass > 0.0) {
                    return Err(Error::domain("em_e_step", "observed pair has zero model probability"));
                }
                for v in &mut q[base..base + nu * ng] {
                    *v /= mass;
                }
            }
        }
        Ok(q)
    }

    /// Closed-form maximizer of the expected complete-data log-likelihood.
    /// Latent rows that receive no mass keep their previous values.
    pub fn m_step(&self, problem: &EmProblem, q: &[f64]) -> EmState {
        let (nx, ny, ng, nu) = (problem.num_inputs(), problem.num_labels, problem.num_generated, self.num_latent);
        let mut assign = self.assign.clone();
        let mut emit_mass = vec![0.0; nu * ng * ny];
        for x in 0..nx {
            let px = problem.p_x[x];
            if px == 0.0 {
                continue;
            }
            let mut row = vec![0.0; nu];
            for y in 0..ny {
                let c = problem.conditional[x * ny + y];
                for u in 0..nu {
                    for g in 0..ng {
                        let w = c * q[((x * ny + y) * nu + u) * ng + g];
                        row[u] += w;
                        emit_mass[(u * ng + g) * ny + y] += px * w;
                    }
                }
            }
            let t: f64 = row.iter().sum();
            for (a, r) in assign[x * nu..(x + 1) * nu].iter_mut().zip(&row) {
                *a = r / t;
            }
        }
        let mut emit = self.emit.clone();
        for (dst, src) in emit.chunks_mut(ny).zip(emit_mass.chunks(ny)) {
            let t: f64 = src.iter().sum();
            if t > 0.0 {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s / t;
                }
            }
        }
        EmState {
            num_latent: nu,
            assign,
            emit,
            posterior: q.to_vec(),
            history: self.history.clone(),
            sandwiches: self.sandwiches.clone(),
        }
    }
}

/// Runs `n_steps` exact E/M iterations, extending the KL history and
/// recording the sandwich quantities of every step.
pub fn em_iterate(problem: &EmProblem, state: &EmState, n_steps: usize) -> Result<EmState> {
    problem.validate()?;
    let mut state = state.clone();
    for _ in 0..n_steps {
        let before = state.objective(problem)?;
        let q = state.e_step(problem)?;
        let mut next = state.m_step(problem, &q);
        let bound = next.bound(problem, &q)?;
        let after = next.objective(problem)?;
        next.history.push(after);
        next.sandwiches.push(Sandwich { before, bound, after });
        state = next;
    }
    Ok(state)
}

/// Largest increase between consecutive entries of a history.
pub fn max_increase(history: &[f64]) -> f64 {
    history.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// One line of the theory report.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryCheck {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub instances: usize,
}

impl TheoryCheck {
    pub fn passed(&self) -> bool {
        self.residual.is_finite() && self.residual <= self.tolerance
    }
}

fn max_cell_error(a: &[Option<f64>], b: &[Option<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .filter_map(|(x, y)| Some(libm::fabs((*x)? - (*y)?)))
        .fold(0.0, f64::max)
}

/// Closed-form D* against per-cell golden-section minimization on random
/// supports up to 12 × 4 (some cells empty).
pub fn check_optimal_discriminator(instances: usize, rng: &mut dyn RngCore) -> Result<TheoryCheck> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (r, c) = (rng.random_range(1..=12), rng.random_range(1..=4));
        let pl = CategoricalJoint::random(r, c, 0.15, rng)?;
        let pg = CategoricalJoint::random(r, c, 0.15, rng)?;
        let pc = CategoricalJoint::random(r, c, 0.15, rng)?;
        let exact = optimal_discriminator(&pl, &pg, &pc)?;
        let numeric = numeric_discriminator(&pl, &pg, &pc)?;
        if exact.iter().zip(&numeric).any(|(a, b)| a.is_some() != b.is_some()) {
            return Err(Error::Contract {
                reason: "closed form and numeric discriminator disagree on defined cells",
            });
        }
        worst = worst.max(max_cell_error(&exact, &numeric));
    }
    Ok(TheoryCheck {
        name: "optimal discriminator vs numeric best response",
        residual: worst,
        tolerance: 1e-6,
        instances,
    })
}

/// Equal inputs must give D* = ½ exactly.
pub fn check_equal_distributions(instances: usize, rng: &mut dyn RngCore) -> Result<TheoryCheck> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let p = CategoricalJoint::random(rng.random_range(1..=12), rng.random_range(1..=4), 0.15, rng)?;
        for d in optimal_discriminator(&p, &p, &p)?.into_iter().flatten() {
            worst = worst.max(libm::fabs(d - 0.5));
        }
    }
    Ok(TheoryCheck {
        name: "optimal discriminator is exactly 1/2 on equal inputs",
        residual: worst,
        tolerance: 0.0,
        instances,
    })
}

/// `−log 4 + 2·JSD` against `−L_D(D*)` summed directly.
pub fn check_value_function(instances: usize, rng: &mut dyn RngCore) -> Result<TheoryCheck> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (r, c) = (rng.random_range(1..=12), rng.random_range(1..=4));
        let pl = CategoricalJoint::random(r, c, 0.15, rng)?;
        let pg = CategoricalJoint::random(r, c, 0.15, rng)?;
        let pc = CategoricalJoint::random(r, c, 0.15, rng)?;
        let d = optimal_discriminator(&pl, &pg, &pc)?;
        let direct = discriminator_value(&pl, &pg, &pc, &d)?;
        worst = worst.max(libm::fabs(direct - value_function(&pl, &pg, &pc)?.adversarial));
    }
    Ok(TheoryCheck {
        name: "value function: JSD form vs direct sum at D*",
        residual: worst,
        tolerance: 1e-12,
        instances,
    })
}

/// Descent over the generator and classifier joints reaches `p_l`.
pub fn check_equilibrium(instances: usize, rng: &mut dyn RngCore) -> Result<TheoryCheck> {
    let cfg = DescentConfig {
        step: 1.0,
        max_steps: 20_000,
        tolerance: 1e-4,
    };
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let beta = [0.25, 0.5, 0.75][i % 3];
        let (r, c) = (rng.random_range(2..=6), rng.random_range(2..=3));
        let pl = CategoricalJoint::random(r, c, 0.0, rng)?;
        let g0 = CategoricalJoint::random(r, c, 0.0, rng)?;
        let c0 = CategoricalJoint::random(r, c, 0.0, rng)?;
        let eq = equilibrium_search(&pl, &g0, &c0, beta, &cfg)?;
        worst = worst.max(eq.distance_to(pl.probs())?);
    }
    Ok(TheoryCheck {
        name: "equilibrium: descent reaches p_gG = p_C = p_l (total variation)",
        residual: worst,
        tolerance: 1e-3,
        instances,
    })
}

/// Exact fake-class optimum on disjoint supports plus K-logit descent.
pub fn check_fake_head(instances: usize, rng: &mut dyn RngCore) -> Result<[TheoryCheck; 2]> {
    let cfg = DescentConfig {
        step: 1.0,
        max_steps: 200_000,
        tolerance: 1e-3,
    };
    let (mut exact_worst, mut descent_worst): (f64, f64) = (0.0, 0.0);
    for _ in 0..instances {
        let (nu, nb) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let mut p_u = random_simplex(nu, rng);
        p_u.resize(nu + nb, 0.0);
        let mut p_bg = vec![0.0; nu];
        p_bg.extend(random_simplex(nb, rng));
        let opt = fake_head_optimum(&p_u, &p_bg)?;
        let mut err = libm::fabs(opt.objective);
        for (i, q) in opt.p_fake.iter().enumerate() {
            let target = if i < nu { 0.0 } else { 1.0 };
            err = err.max(q.map_or(f64::INFINITY, |v| libm::fabs(v - target)));
        }
        exact_worst = exact_worst.max(err);

        let k = rng.random_range(2..=10);
        let init: Vec<Vec<f64>> = (0..nu + nb)
            .map(|_| (0..k).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let run = fake_head_descent(&p_u, &p_bg, &init, &cfg)?;
        for (i, q) in run.p_fake.iter().enumerate() {
            let target = if i < nu { 0.0 } else { 1.0 };
            descent_worst = descent_worst.max(libm::fabs(q - target));
        }
    }
    Ok([
        TheoryCheck {
            name: "fake-class optimum: objective 0, p_fake 0 on data and 1 on bG",
            residual: exact_worst,
            tolerance: 0.0,
            instances,
        },
        TheoryCheck {
            name: "fake-class optimum: K-logit gradient descent",
            residual: descent_worst,
            tolerance: 1e-3,
            instances,
        },
    ])
}

/// KL chain rule on random joints over 4 × 3 × 2 supports.
pub fn check_kl_chain(instances: usize, rng: &mut dyn RngCore) -> Result<TheoryCheck> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let p = CategoricalJoint::random(4, 6, 0.2, rng)?;
        let q = CategoricalJoint::random(4, 6, 0.0, rng)?;
        worst = worst.max(kl_chain_check(p.probs(), q.probs(), 4, 6)?);
    }
    Ok(TheoryCheck {
        name: "KL chain rule",
        residual: worst,
        tolerance: 1e-12,
        instances,
    })
}

/// Exact EM: monotone KL history and the sandwich inequality at every step.
pub fn check_em(instances: usize, steps: usize, rng: &mut dyn RngCore) -> Result<[TheoryCheck; 3]> {
    let (mut mono, mut sandwich, mut fixed): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..instances {
        let nx = rng.random_range(2..=5);
        let ny = rng.random_range(2..=3);
        let ng = rng.random_range(1..=3);
        let problem = EmProblem::random(nx, ny, ng, rng)?;
        let start = EmState::random(&problem, rng.random_range(1..=nx), rng)?;
        let run = em_iterate(&problem, &start, steps)?;
        mono = mono.max(max_increase(&run.history));
        sandwich = sandwich.max(run.sandwiches.iter().map(Sandwich::violation).fold(0.0, f64::max));
        let truth = em_iterate(&problem, &EmState::at_truth(&problem)?, steps)?;
        fixed = fixed.max(truth.history.iter().copied().fold(0.0, f64::max));
    }
    Ok([
        TheoryCheck {
            name: "EM: KL history non-increasing",
            residual: mono,
            tolerance: 1e-12,
            instances,
        },
        TheoryCheck {
            name: "EM: J(t+1) <= J(t+1, q_t) <= J(t) at every step",
            residual: sandwich,
            tolerance: 1e-12,
            instances,
        },
        TheoryCheck {
            name: "EM: true conditional is a fixed point with KL 0",
            residual: fixed,
            tolerance: 1e-12,
            instances,
        },
    ])
}

/// Full report, deterministic in `seed`.
///
/// `trials` random instances feed the closed-form checks and EM; the
/// iterative equilibrium and fake-head searches use at most 12 and 20.
pub fn verify_theory(trials: usize, seed: u64) -> Result<Vec<TheoryCheck>> {
    if trials == 0 {
        return Err(Error::domain("verify_theory", "need at least one trial"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![
        check_optimal_discriminator(trials, &mut rng)?,
        check_equal_distributions(trials, &mut rng)?,
        check_value_function(trials, &mut rng)?,
        check_equilibrium(trials.min(12), &mut rng)?,
    ];
    out.extend(check_fake_head(trials.min(20), &mut rng)?);
    out.push(check_kl_chain(trials, &mut rng)?);
    out.extend(check_em(trials, 50, &mut rng)?);
    Ok(out)
}
