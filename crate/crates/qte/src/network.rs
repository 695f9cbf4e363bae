//! Feed-forward networks that map (treatment, balancing score) inputs
//! to spline mixture weights, with Gaussian scale-mixture priors.
//!
//! Hidden layers use tanh activations; the output layer is linear and
//! is turned into mixture weights by a softmax. Every weight, biases
//! included, carries a N(0, 1/(kappa_l * omega_lj)) prior where kappa
//! is a per-layer precision and omega a per-input-unit precision, both
//! with Gamma hyperpriors. The log-posterior keeps the full Gaussian
//! normalizing constant so its value is exactly the log-likelihood
//! plus sum of log prior densities.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::numeric::pairwise_sum;
use crate::spline::{MixtureWeights, SplineBasis};
use crate::{Error, Result};

/// Density floor applied before taking logs; hitting it is surfaced as
/// a fit diagnostic.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Layer sizes of a fully connected network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkArchitecture {
    input_dim: usize,
    hidden: Vec<usize>,
    output_dim: usize,
}

impl NetworkArchitecture {
    /// A network with the given input width, hidden layer widths, and
    /// output width. `hidden` may be empty (a single affine layer).
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        if output_dim == 0 {
            return Err(Error::InvalidArgument("output_dim must be positive".into()));
        }
        if hidden.iter().any(|h| *h == 0) {
            return Err(Error::InvalidArgument(
                "hidden layer widths must be positive".into(),
            ));
        }
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    /// (rows, cols) of each weight matrix; column 0 is the bias.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.num_layers());
        let mut fan_in = self.input_dim;
        for &h in &self.hidden {
            dims.push((h, fan_in + 1));
            fan_in = h;
        }
        dims.push((self.output_dim, fan_in + 1));
        dims
    }

    /// Total number of weights including biases.
    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(r, c)| r * c).sum()
    }
}

/// Network weights stored as one flat vector, row-major within each
/// layer; element 0 of each row is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    dims: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    flat: Vec<f64>,
}

impl NetworkWeights {
    pub fn zeros(arch: &NetworkArchitecture) -> Self {
        let dims = arch.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for (r, c) in &dims {
            offsets.push(total);
            total += r * c;
        }
        Self {
            dims,
            offsets,
            flat: vec![0.0; total],
        }
    }

    /// Wraps a flat parameter vector laid out like [`Self::as_flat`].
    pub fn from_flat(arch: &NetworkArchitecture, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != arch.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                arch.num_params(),
                flat.len()
            )));
        }
        let mut w = Self::zeros(arch);
        w.flat = flat;
        Ok(w)
    }

    /// Independent N(0, sd^2) draws for every weight.
    pub fn sample_gaussian<R: rand::Rng>(arch: &NetworkArchitecture, sd: f64, rng: &mut R) -> Self {
        let mut w = Self::zeros(arch);
        for v in &mut w.flat {
            *v = sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        w
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len()
    }

    pub fn layer_dims(&self, layer: usize) -> (usize, usize) {
        self.dims[layer]
    }

    pub fn num_params(&self) -> usize {
        self.flat.len()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub(crate) fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    /// Row `r` of layer `layer`: bias first, then one weight per input.
    pub fn row(&self, layer: usize, r: usize) -> &[f64] {
        let (_, cols) = self.dims[layer];
        let start = self.offsets[layer] + r * cols;
        &self.flat[start..start + cols]
    }
}

/// Per-layer and per-input-unit precisions of the scale-mixture prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionState {
    kappa: Vec<f64>,
    omega: Vec<Vec<f64>>,
}

impl PrecisionState {
    /// All precisions set to one.
    pub fn ones(arch: &NetworkArchitecture) -> Self {
        let dims = arch.layer_dims();
        Self {
            kappa: vec![1.0; dims.len()],
            omega: dims.iter().map(|(_, c)| vec![1.0; *c]).collect(),
        }
    }

    pub fn kappa(&self, layer: usize) -> f64 {
        self.kappa[layer]
    }

    /// Precision of input unit `j` of `layer`; `j = 0` is the bias.
    pub fn omega(&self, layer: usize, j: usize) -> f64 {
        self.omega[layer][j]
    }

    pub fn num_layers(&self) -> usize {
        self.kappa.len()
    }

    pub fn num_units(&self, layer: usize) -> usize {
        self.omega[layer].len()
    }

    pub fn set_kappa(&mut self, layer: usize, value: f64) {
        self.kappa[layer] = value;
    }

    pub fn set_omega(&mut self, layer: usize, j: usize, value: f64) {
        self.omega[layer][j] = value;
    }

    fn check_compatible(&self, weights: &NetworkWeights) -> Result<()> {
        if self.kappa.len() != weights.num_layers()
            || self
                .omega
                .iter()
                .zip(&weights.dims)
                .any(|(o, (_, c))| o.len() != *c)
        {
            return Err(Error::ShapeMismatch(
                "precision state does not match weight layout".into(),
            ));
        }
        Ok(())
    }
}

/// Gamma hyperprior parameters of the scale-mixture precisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsmHyperParams {
    pub a_kappa: f64,
    pub b_kappa: f64,
    pub a_omega: f64,
    pub b_omega: f64,
}

impl Default for GsmHyperParams {
    fn default() -> Self {
        Self {
            a_kappa: 0.01,
            b_kappa: 0.01,
            a_omega: 0.01,
            b_omega: 0.01,
        }
    }
}

impl GsmHyperParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a_kappa, self.b_kappa, self.a_omega, self.b_omega];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidArgument(
                "Gamma hyperparameters must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Reusable buffers for forward and backward passes.
#[derive(Debug)]
pub struct Workspace {
    pub(crate) acts: Vec<Vec<f64>>,
    pub(crate) deltas: Vec<Vec<f64>>,
    pub(crate) theta: Vec<f64>,
    pub(crate) obs_ll: Vec<f64>,
}

impl Workspace {
    pub fn new(arch: &NetworkArchitecture) -> Self {
        let dims = arch.layer_dims();
        Self {
            acts: dims.iter().map(|(r, _)| vec![0.0; *r]).collect(),
            deltas: dims.iter().map(|(r, _)| vec![0.0; *r]).collect(),
            theta: vec![0.0; arch.output_dim()],
            obs_ll: Vec::new(),
        }
    }
}

/// Runs the network forward; hidden layers tanh, output raw. The
/// logits end up in `ws.acts` last layer and are returned.
pub(crate) fn forward<'w>(
    weights: &NetworkWeights,
    input: &[f64],
    ws: &'w mut Workspace,
) -> &'w [f64] {
    let nl = weights.num_layers();
    for l in 0..nl {
        let (rows, cols) = weights.dims[l];
        let (before, rest) = ws.acts.split_at_mut(l);
        let prev: &[f64] = if l == 0 { input } else { &before[l - 1] };
        debug_assert_eq!(prev.len() + 1, cols);
        let cur = &mut rest[0];
        let base = weights.offsets[l];
        for r in 0..rows {
            let row = &weights.flat[base + r * cols..base + (r + 1) * cols];
            let mut z = row[0];
            for (w, a) in row[1..].iter().zip(prev) {
                z += w * a;
            }
            cur[r] = if l + 1 < nl { z.tanh() } else { z };
        }
    }
    &ws.acts[nl - 1]
}

/// Accumulates d(objective)/d(weights) into `grad`, given that
/// `ws.deltas` last layer holds d(objective)/d(logits) and `ws.acts`
/// holds the activations of a preceding [`forward`] call.
pub(crate) fn backprop(
    weights: &NetworkWeights,
    input: &[f64],
    ws: &mut Workspace,
    grad: &mut [f64],
) {
    let nl = weights.num_layers();
    for l in (0..nl).rev() {
        let (rows, cols) = weights.dims[l];
        let base = weights.offsets[l];
        let prev: &[f64] = if l == 0 { input } else { &ws.acts[l - 1] };
        let (dl, dr) = ws.deltas.split_at_mut(l);
        let delta = &dr[0];
        for r in 0..rows {
            let d = delta[r];
            let g = &mut grad[base + r * cols..base + (r + 1) * cols];
            g[0] += d;
            for (gj, a) in g[1..].iter_mut().zip(prev) {
                *gj += d * a;
            }
        }
        if l > 0 {
            let acts_prev = &ws.acts[l - 1];
            let next_delta = &mut dl[l - 1];
            for j in 0..cols - 1 {
                let mut s = 0.0;
                for r in 0..rows {
                    s += weights.flat[base + r * cols + j + 1] * delta[r];
                }
                let a = acts_prev[j];
                next_delta[j] = s * (1.0 - a * a);
            }
        }
    }
}

pub(crate) fn softmax(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, z) in out.iter_mut().zip(logits) {
        *o = (z - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Mixture weights produced by the network for treatment `t` and
/// balancing score `score`.
pub fn mixture_weights(
    arch: &NetworkArchitecture,
    weights: &NetworkWeights,
    t: f64,
    score: &[f64],
) -> Result<MixtureWeights> {
    check_weights(arch, weights)?;
    if score.len() + 1 != arch.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "network expects input width {}, got treatment plus {} scores",
            arch.input_dim(),
            score.len()
        )));
    }
    let mut input = Vec::with_capacity(arch.input_dim());
    input.push(t);
    input.extend_from_slice(score);
    let mut ws = Workspace::new(arch);
    forward(weights, &input, &mut ws);
    let mut theta = vec![0.0; arch.output_dim()];
    softmax(&ws.acts[arch.num_layers() - 1], &mut theta);
    MixtureWeights::new(theta)
}

fn check_weights(arch: &NetworkArchitecture, weights: &NetworkWeights) -> Result<()> {
    if weights.dims != arch.layer_dims() {
        return Err(Error::ShapeMismatch(
            "weights do not match architecture".into(),
        ));
    }
    Ok(())
}

/// Observations prepared for the mixture likelihood: stacked network
/// inputs (treatment first, then the balancing score) and the spline
/// density basis evaluated at each normalized outcome.
#[derive(Debug, Clone)]
pub struct MixtureData {
    n: usize,
    input_dim: usize,
    basis_size: usize,
    inputs: Vec<f64>,
    m_rows: Vec<f64>,
}

impl MixtureData {
    /// Precomputes basis rows for normalized outcomes `y` (all in
    /// [0, 1]) with treatments `t` and per-subject scores.
    pub fn new(basis: &SplineBasis, y: &[f64], t: &[u8], scores: &[Vec<f64>]) -> Result<Self> {
        if y.len() != t.len() || y.len() != scores.len() {
            return Err(Error::ShapeMismatch(format!(
                "lengths differ: {} outcomes, {} treatments, {} scores",
                y.len(),
                t.len(),
                scores.len()
            )));
        }
        let score_dim = scores.first().map_or(0, |s| s.len());
        if scores.iter().any(|s| s.len() != score_dim) {
            return Err(Error::ShapeMismatch("ragged score rows".into()));
        }
        let input_dim = score_dim + 1;
        let k = basis.size();
        let mut inputs = Vec::with_capacity(y.len() * input_dim);
        let mut m_rows = vec![0.0; y.len() * k];
        for (i, ((yi, ti), si)) in y.iter().zip(t).zip(scores).enumerate() {
            if !si.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("score row {i}")));
            }
            inputs.push(*ti as f64);
            inputs.extend_from_slice(si);
            basis.m_row(*yi, &mut m_rows[i * k..(i + 1) * k])?;
        }
        Ok(Self {
            n: y.len(),
            input_dim,
            basis_size: k,
            inputs,
            m_rows,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub(crate) fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub(crate) fn m_row(&self, i: usize) -> &[f64] {
        &self.m_rows[i * self.basis_size..(i + 1) * self.basis_size]
    }
}

/// A likelihood whose parameters are the weights of one network; the
/// chain runner composes it with the scale-mixture prior.
pub trait NetworkLikelihood {
    fn arch(&self) -> &NetworkArchitecture;

    /// Log-likelihood at `weights`; when `grad` is given, adds the
    /// likelihood gradient into it.
    fn log_lik_grad(
        &self,
        weights: &NetworkWeights,
        grad: Option<&mut [f64]>,
        ws: &mut Workspace,
    ) -> f64;
}

/// Spline mixture likelihood over prepared observations.
#[derive(Debug)]
pub struct MixtureModel<'a> {
    arch: NetworkArchitecture,
    data: &'a MixtureData,
    clamp_events: AtomicU64,
}

impl<'a> MixtureModel<'a> {
    pub fn new(arch: NetworkArchitecture, data: &'a MixtureData) -> Result<Self> {
        // An empty dataset has no rows to pin the input width.
        if !data.is_empty() && arch.input_dim() != data.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "network input width {} but data rows have width {}",
                arch.input_dim(),
                data.input_dim()
            )));
        }
        if arch.output_dim() != data.basis_size {
            return Err(Error::ShapeMismatch(format!(
                "network outputs {} mixture weights but basis has {} functions",
                arch.output_dim(),
                data.basis_size
            )));
        }
        Ok(Self {
            arch,
            data,
            clamp_events: AtomicU64::new(0),
        })
    }

    /// Times the density floor was hit while evaluating log-densities.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    /// Per-observation log-densities at one weight draw, as needed for
    /// pointwise model comparison.
    pub fn obs_log_densities(&self, weights: &NetworkWeights) -> Result<Vec<f64>> {
        check_weights(&self.arch, weights)?;
        let mut ws = Workspace::new(&self.arch);
        let mut out = Vec::with_capacity(self.data.n);
        for i in 0..self.data.n {
            forward(weights, self.data.input(i), &mut ws);
            softmax(&ws.acts[self.arch.num_layers() - 1], &mut ws.theta);
            let g: f64 = ws
                .theta
                .iter()
                .zip(self.data.m_row(i))
                .map(|(t, m)| t * m)
                .sum();
            out.push(g.max(DENSITY_FLOOR).ln());
        }
        Ok(out)
    }
}

impl NetworkLikelihood for MixtureModel<'_> {
    fn arch(&self) -> &NetworkArchitecture {
        &self.arch
    }

    fn log_lik_grad(
        &self,
        weights: &NetworkWeights,
        mut grad: Option<&mut [f64]>,
        ws: &mut Workspace,
    ) -> f64 {
        let n = self.data.n;
        let nl = self.arch.num_layers();
        ws.obs_ll.resize(n, 0.0);
        for i in 0..n {
            let input = self.data.input(i);
            let m_row = self.data.m_row(i);
            forward(weights, input, ws);
            softmax(&ws.acts[nl - 1], &mut ws.theta);
            let g: f64 = ws.theta.iter().zip(m_row).map(|(t, m)| t * m).sum();
            let gc = if g < DENSITY_FLOOR {
                self.clamp_events.fetch_add(1, Ordering::Relaxed);
                DENSITY_FLOOR
            } else {
                g
            };
            ws.obs_ll[i] = gc.ln();
            if let Some(grad) = grad.as_deref_mut() {
                for ((d, t), m) in ws.deltas[nl - 1]
                    .iter_mut()
                    .zip(&ws.theta)
                    .zip(m_row)
                {
                    *d = t * (m / gc - 1.0);
                }
                backprop(weights, input, ws, grad);
            }
        }
        pairwise_sum(&ws.obs_ll)
    }
}

/// Log densities of the scale-mixture prior at `weights`, normalizing
/// constants included.
pub fn gsm_log_prior(weights: &NetworkWeights, precisions: &PrecisionState) -> Result<f64> {
    precisions.check_compatible(weights)?;
    Ok(gsm_log_prior_unchecked(weights, precisions))
}

pub(crate) fn gsm_log_prior_unchecked(
    weights: &NetworkWeights,
    precisions: &PrecisionState,
) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_74;
    let mut total = 0.0;
    for l in 0..weights.num_layers() {
        let (rows, _) = weights.dims[l];
        let kap = precisions.kappa[l];
        for r in 0..rows {
            let row = weights.row(l, r);
            for (j, w) in row.iter().enumerate() {
                let p = kap * precisions.omega[l][j];
                total += 0.5 * p.ln() - HALF_LN_2PI - 0.5 * p * w * w;
            }
        }
    }
    total
}

/// Adds d(log prior)/d(weights) into `grad`.
pub(crate) fn gsm_log_prior_grad(
    weights: &NetworkWeights,
    precisions: &PrecisionState,
    grad: &mut [f64],
) {
    for l in 0..weights.num_layers() {
        let (rows, cols) = weights.dims[l];
        let base = weights.offsets[l];
        let kap = precisions.kappa[l];
        for r in 0..rows {
            for j in 0..cols {
                let idx = base + r * cols + j;
                grad[idx] -= kap * precisions.omega[l][j] * weights.flat[idx];
            }
        }
    }
}

/// Mixture log-likelihood of `data` at `weights`.
pub fn log_likelihood(
    arch: &NetworkArchitecture,
    weights: &NetworkWeights,
    basis: &SplineBasis,
    data: &MixtureData,
) -> Result<f64> {
    check_weights(arch, weights)?;
    check_basis(arch, basis)?;
    let model = MixtureModel::new(arch.clone(), data)?;
    let mut ws = Workspace::new(arch);
    Ok(model.log_lik_grad(weights, None, &mut ws))
}

/// Log-likelihood plus log prior density of the weights.
pub fn log_posterior(
    arch: &NetworkArchitecture,
    weights: &NetworkWeights,
    precisions: &PrecisionState,
    basis: &SplineBasis,
    data: &MixtureData,
) -> Result<f64> {
    Ok(log_likelihood(arch, weights, basis, data)? + gsm_log_prior(weights, precisions)?)
}

/// Gradient of [`log_posterior`] with respect to the flat weights.
pub fn grad_log_posterior(
    arch: &NetworkArchitecture,
    weights: &NetworkWeights,
    precisions: &PrecisionState,
    basis: &SplineBasis,
    data: &MixtureData,
) -> Result<Vec<f64>> {
    check_weights(arch, weights)?;
    check_basis(arch, basis)?;
    precisions.check_compatible(weights)?;
    let model = MixtureModel::new(arch.clone(), data)?;
    let mut ws = Workspace::new(arch);
    let mut grad = vec![0.0; weights.num_params()];
    model.log_lik_grad(weights, Some(&mut grad), &mut ws);
    gsm_log_prior_grad(weights, precisions, &mut grad);
    Ok(grad)
}

fn check_basis(arch: &NetworkArchitecture, basis: &SplineBasis) -> Result<()> {
    if arch.output_dim() != basis.size() {
        return Err(Error::ShapeMismatch(format!(
            "network outputs {} mixture weights but basis has {} functions",
            arch.output_dim(),
            basis.size()
        )));
    }
    Ok(())
}
