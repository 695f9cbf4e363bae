//! No-U-turn sampler with multinomial state selection.
//!
//! Trajectories are built by iterative doubling with the position-based
//! termination criterion; states are weighted by exp(-H) and selected
//! multinomially. A leapfrog state whose energy exceeds the initial
//! energy by more than [`DIVERGENCE_THRESHOLD`] marks the subtree
//! divergent: the doubling stops and the draw so far is kept.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{STEP_SIZE_MAX, STEP_SIZE_MIN};
use crate::{Error, Result};

/// Energy-error bound above which a trajectory is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Per-draw diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawStats {
    /// Mean Metropolis acceptance statistic over visited states.
    pub accept_stat: f64,
    /// Number of doublings performed.
    pub depth: usize,
    /// Whether any leapfrog state was divergent.
    pub divergent: bool,
    /// Energy of the selected state minus the initial energy.
    pub energy_error: f64,
    /// Leapfrog steps taken.
    pub n_leapfrog: usize,
}

struct End {
    pos: Vec<f64>,
    mom: Vec<f64>,
    grad: Vec<f64>,
}

struct Tree {
    left: End,
    right: End,
    proposal: Vec<f64>,
    proposal_h: f64,
    log_sum_w: f64,
    alpha_sum: f64,
    n_alpha: usize,
    n_leapfrog: usize,
    divergent: bool,
    turned: bool,
}

impl Tree {
    fn invalid(&self) -> bool {
        self.divergent || self.turned
    }
}

/// One leapfrog step of size `eps` (signed).
fn leapfrog<F>(end: &End, eps: f64, logp_grad: &mut F) -> (End, f64)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = end.pos.len();
    let mut mom: Vec<f64> = end
        .mom
        .iter()
        .zip(&end.grad)
        .map(|(p, g)| p + 0.5 * eps * g)
        .collect();
    let pos: Vec<f64> = end
        .pos
        .iter()
        .zip(&mom)
        .map(|(q, p)| q + eps * p)
        .collect();
    let mut grad = vec![0.0; dim];
    let logp = logp_grad(&pos, &mut grad);
    for (p, g) in mom.iter_mut().zip(&grad) {
        *p += 0.5 * eps * g;
    }
    let kinetic: f64 = 0.5 * mom.iter().map(|p| p * p).sum::<f64>();
    let h = -logp + kinetic;
    (End { pos, mom, grad }, h)
}

fn is_uturn(left: &End, right: &End) -> bool {
    let mut d_left = 0.0;
    let mut d_right = 0.0;
    for i in 0..left.pos.len() {
        let d = right.pos[i] - left.pos[i];
        d_left += d * left.mom[i];
        d_right += d * right.mom[i];
    }
    d_left < 0.0 || d_right < 0.0
}

fn clone_end(end: &End) -> End {
    End {
        pos: end.pos.clone(),
        mom: end.mom.clone(),
        grad: end.grad.clone(),
    }
}

/// Builds a subtree of 2^depth states moving in the sign of `eps`,
/// starting one leapfrog step after `from`.
fn build_tree<F, R>(
    depth: usize,
    from: &End,
    eps: f64,
    h0: f64,
    logp_grad: &mut F,
    rng: &mut R,
) -> Tree
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    R: Rng,
{
    if depth == 0 {
        let (end, h) = leapfrog(from, eps, logp_grad);
        let delta = h - h0;
        // NaN energies compare false, which lands in the divergent arm.
        let divergent = !(delta < DIVERGENCE_THRESHOLD);
        let alpha = if delta.is_nan() { 0.0 } else { (-delta).min(0.0).exp() };
        return Tree {
            proposal: end.pos.clone(),
            proposal_h: h,
            left: clone_end(&end),
            right: end,
            log_sum_w: if divergent { f64::NEG_INFINITY } else { -delta },
            alpha_sum: alpha,
            n_alpha: 1,
            n_leapfrog: 1,
            divergent,
            turned: false,
        };
    }

    let mut first = build_tree(depth - 1, from, eps, h0, logp_grad, rng);
    if first.invalid() {
        return first;
    }
    let start = if eps > 0.0 { &first.right } else { &first.left };
    let second = build_tree(depth - 1, start, eps, h0, logp_grad, rng);

    first.alpha_sum += second.alpha_sum;
    first.n_alpha += second.n_alpha;
    first.n_leapfrog += second.n_leapfrog;
    first.divergent |= second.divergent;
    first.turned |= second.turned;
    if !first.invalid() {
        let total = log_add_exp(first.log_sum_w, second.log_sum_w);
        if accept_log_prob(second.log_sum_w - total, rng) {
            first.proposal = second.proposal;
            first.proposal_h = second.proposal_h;
        }
        first.log_sum_w = total;
        if eps > 0.0 {
            first.right = second.right;
        } else {
            first.left = second.left;
        }
        first.turned = is_uturn(&first.left, &first.right);
    }
    first
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn accept_log_prob<R: Rng>(log_p: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u.ln() < log_p
}

/// One NUTS transition from `state` under the log density `logp_grad`
/// (which writes the gradient into its second argument). Returns the
/// next state and diagnostics; on divergence the draw so far is kept
/// and the flag is set.
pub fn nuts_draw<F, R>(
    state: &[f64],
    logp_grad: &mut F,
    step_size: f64,
    max_depth: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, DrawStats)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    R: Rng,
{
    if !step_size.is_finite() || step_size <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {step_size}"
        )));
    }
    let dim = state.len();
    let mut grad0 = vec![0.0; dim];
    let logp0 = logp_grad(state, &mut grad0);
    if !logp0.is_finite() {
        return Err(Error::NonFinite("log density at chain state".into()));
    }
    let mom0: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let kinetic: f64 = 0.5 * mom0.iter().map(|p| p * p).sum::<f64>();
    let h0 = -logp0 + kinetic;

    let init = End {
        pos: state.to_vec(),
        mom: mom0,
        grad: grad0,
    };
    let mut tree = Tree {
        proposal: state.to_vec(),
        proposal_h: h0,
        left: clone_end(&init),
        right: init,
        log_sum_w: 0.0,
        alpha_sum: 0.0,
        n_alpha: 0,
        n_leapfrog: 0,
        divergent: false,
        turned: false,
    };

    let mut depth = 0;
    while depth < max_depth {
        let forward = rng.random_bool(0.5);
        let eps = if forward { step_size } else { -step_size };
        let from = if forward { &tree.right } else { &tree.left };
        let sub = build_tree(depth, from, eps, h0, logp_grad, rng);

        tree.alpha_sum += sub.alpha_sum;
        tree.n_alpha += sub.n_alpha;
        tree.n_leapfrog += sub.n_leapfrog;
        if sub.invalid() {
            tree.divergent |= sub.divergent;
            break;
        }
        let total = log_add_exp(tree.log_sum_w, sub.log_sum_w);
        if accept_log_prob(sub.log_sum_w - total, rng) {
            tree.proposal = sub.proposal;
            tree.proposal_h = sub.proposal_h;
        }
        tree.log_sum_w = total;
        if forward {
            tree.right = sub.right;
        } else {
            tree.left = sub.left;
        }
        depth += 1;
        if is_uturn(&tree.left, &tree.right) {
            break;
        }
    }

    let accept_stat = if tree.n_alpha == 0 {
        1.0
    } else {
        tree.alpha_sum / tree.n_alpha as f64
    };
    let stats = DrawStats {
        accept_stat,
        depth,
        divergent: tree.divergent,
        energy_error: tree.proposal_h - h0,
        n_leapfrog: tree.n_leapfrog,
    };
    Ok((tree.proposal, stats))
}

/// Doubles or halves a unit step size until one leapfrog step's
/// acceptance probability crosses 1/2, then clamps to the supported
/// step-size range.
pub fn find_initial_step_size<F, R>(state: &[f64], logp_grad: &mut F, rng: &mut R) -> Result<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    R: Rng,
{
    let dim = state.len();
    let mut grad0 = vec![0.0; dim];
    let logp0 = logp_grad(state, &mut grad0);
    if !logp0.is_finite() {
        return Err(Error::NonFinite("log density at initial state".into()));
    }
    let mom: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let kinetic: f64 = 0.5 * mom.iter().map(|p| p * p).sum::<f64>();
    let h0 = -logp0 + kinetic;
    let start = End {
        pos: state.to_vec(),
        mom,
        grad: grad0,
    };

    let log_ratio = |eps: f64, f: &mut F| -> f64 {
        let (_, h) = leapfrog(&start, eps, f);
        h0 - h
    };

    let mut eps = 1.0;
    let r0 = log_ratio(eps, logp_grad);
    let a = if r0.is_nan() || r0 <= 0.5f64.ln() { -1.0 } else { 1.0 };
    for _ in 0..100 {
        let r = log_ratio(eps, logp_grad);
        let keep_going = if r.is_nan() {
            a < 0.0
        } else {
            a * r > -a * std::f64::consts::LN_2
        };
        if !keep_going {
            break;
        }
        eps *= 2f64.powf(a);
        if !(STEP_SIZE_MIN..=STEP_SIZE_MAX).contains(&eps) {
            break;
        }
    }
    Ok(eps.clamp(STEP_SIZE_MIN, STEP_SIZE_MAX))
}
