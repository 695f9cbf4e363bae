//! Posterior draws of the propensity score.
//!
//! Treatment assignment is modeled as logistic in a network logit
//! with the same scale-mixture prior and sampler as the outcome
//! model. A handful of retained draws is enough here: each draw only
//! seeds one balancing-score configuration for the outcome stage, so
//! the default schedule keeps five.

use crate::network::{
    backprop, forward, GsmHyperParams, NetworkArchitecture, NetworkLikelihood, NetworkWeights,
    Workspace,
};
use crate::numeric::{pairwise_sum, sigmoid, softplus};
use crate::sampler::{run_chain_on_stream, SamplerConfig};
use crate::{Error, Result};

/// Fitted probabilities are kept away from 0 and 1 by this margin so
/// downstream logits and weights stay finite.
pub const PROB_CLAMP: f64 = 1e-6;

/// Bernoulli likelihood whose logit is the scalar network output.
#[derive(Debug)]
pub struct LogisticModel {
    arch: NetworkArchitecture,
    inputs: Vec<f64>,
    labels: Vec<u8>,
    n: usize,
}

impl LogisticModel {
    /// `x` holds one covariate row per observation, `t` the 0/1
    /// treatment labels. Row width must match the network input.
    pub fn new(arch: NetworkArchitecture, x: &[Vec<f64>], t: &[u8]) -> Result<Self> {
        if arch.output_dim() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "logistic model needs one output logit, network has {}",
                arch.output_dim()
            )));
        }
        if x.len() != t.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} covariate rows but {} labels",
                x.len(),
                t.len()
            )));
        }
        let dim = arch.input_dim();
        let mut inputs = Vec::with_capacity(x.len() * dim);
        for (i, row) in x.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "covariate row {i} has width {}, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("covariate row {i}")));
            }
            inputs.extend_from_slice(row);
        }
        for (i, &ti) in t.iter().enumerate() {
            if ti > 1 {
                return Err(Error::InvalidArgument(format!(
                    "label {i} is {ti}, expected 0 or 1"
                )));
            }
        }
        Ok(Self {
            arch,
            inputs,
            labels: t.to_vec(),
            n: t.len(),
        })
    }

    fn input(&self, i: usize) -> &[f64] {
        let d = self.arch.input_dim();
        &self.inputs[i * d..(i + 1) * d]
    }
}

impl NetworkLikelihood for LogisticModel {
    fn arch(&self) -> &NetworkArchitecture {
        &self.arch
    }

    fn log_lik_grad(
        &self,
        weights: &NetworkWeights,
        mut grad: Option<&mut [f64]>,
        ws: &mut Workspace,
    ) -> f64 {
        let nl = self.arch.num_layers();
        ws.obs_ll.resize(self.n, 0.0);
        for i in 0..self.n {
            let input = self.input(i);
            let z = forward(weights, input, ws)[0];
            let t = f64::from(self.labels[i]);
            ws.obs_ll[i] = t * z - softplus(z);
            if let Some(grad) = grad.as_deref_mut() {
                ws.deltas[nl - 1][0] = t - sigmoid(z);
                backprop(weights, input, ws, grad);
            }
        }
        pairwise_sum(&ws.obs_ll)
    }
}

/// Settings for [`fit_propensity`].
#[derive(Debug, Clone)]
pub struct PropensityConfig {
    /// Hidden layer widths of the logit network.
    pub hidden: Vec<usize>,
    pub sampler: SamplerConfig,
    pub hyper: GsmHyperParams,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        // 5 retained draws; one balancing-score configuration each.
        Self {
            hidden: vec![10],
            sampler: SamplerConfig {
                n_iter: 1000,
                n_burnin: 500,
                thin: 100,
                ..SamplerConfig::default()
            },
            hyper: GsmHyperParams::default(),
        }
    }
}

/// A Bayesian binary-regression backend producing propensity draws.
/// The neural sampler is the default; any posterior sampler for
/// P(T=1 | X) can stand in.
pub trait BinaryRegression {
    fn fit(&self, x: &[Vec<f64>], t: &[u8]) -> Result<PropensityDraws>;
}

/// Default backend: logistic network with the scale-mixture prior.
#[derive(Debug, Clone, Default)]
pub struct NeuralPropensity(pub PropensityConfig);

impl BinaryRegression for NeuralPropensity {
    fn fit(&self, x: &[Vec<f64>], t: &[u8]) -> Result<PropensityDraws> {
        fit_propensity(x, t, &self.0)
    }
}

/// Retained propensity draws over a fixed set of observations.
///
/// Holds one probability row per posterior draw. Draws produced by
/// [`fit_propensity`] also carry the fitted networks, so scores can
/// be produced for covariates outside the training set.
#[derive(Debug, Clone)]
pub struct PropensityDraws {
    probs: Vec<Vec<f64>>,
    fitted: Option<Fitted>,
}

#[derive(Debug, Clone)]
struct Fitted {
    arch: NetworkArchitecture,
    weights: Vec<NetworkWeights>,
}

impl PropensityDraws {
    /// Wraps externally known propensities as a single draw. Each
    /// value must lie strictly inside (0, 1); values are then pushed
    /// inside the clamp bounds like fitted ones.
    pub fn known(probs: &[f64]) -> Result<Self> {
        Self::from_rows(vec![probs.to_vec()])
    }

    /// Assembles draws from probability rows, one row per draw, as
    /// read back from a stored propensity matrix.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidArgument("no propensity values".into()));
        }
        let n = rows[0].len();
        let mut probs = rows;
        for row in &mut probs {
            if row.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "propensity rows of length {} and {n}",
                    row.len()
                )));
            }
            for p in row.iter_mut() {
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(Error::PropensityOutOfRange(*p));
                }
                *p = clamp_prob(*p);
            }
        }
        Ok(Self {
            probs,
            fitted: None,
        })
    }

    /// A single draw assigning the same probability to `n` units, as
    /// in a randomized design with known assignment probability.
    pub fn constant(p: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("zero observations".into()));
        }
        Self::from_rows(vec![vec![p; n]])
    }

    pub fn num_draws(&self) -> usize {
        self.probs.len()
    }

    pub fn num_obs(&self) -> usize {
        self.probs[0].len()
    }

    /// Probability row of draw `j`, one entry per observation.
    pub fn draw(&self, j: usize) -> &[f64] {
        &self.probs[j]
    }

    /// Propensity of draw `j` at a new covariate row. Only available
    /// for fitted draws; known propensities carry no model.
    pub fn predict(&self, j: usize, x: &[f64]) -> Result<f64> {
        let fitted = self.fitted.as_ref().ok_or_else(|| {
            Error::InvalidArgument("these draws carry no fitted network".into())
        })?;
        if j >= fitted.weights.len() {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: fitted.weights.len(),
            });
        }
        if x.len() != fitted.arch.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "covariate row has width {}, expected {}",
                x.len(),
                fitted.arch.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariate row".into()));
        }
        let mut ws = Workspace::new(&fitted.arch);
        let z = forward(&fitted.weights[j], x, &mut ws)[0];
        Ok(clamp_prob(sigmoid(z)))
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Samples the propensity posterior and returns the retained draws
/// evaluated at the training rows. Runs on stream 0 of the seed in
/// `config.sampler`; both treatment arms must be present.
pub fn fit_propensity(
    x: &[Vec<f64>],
    t: &[u8],
    config: &PropensityConfig,
) -> Result<PropensityDraws> {
    if !t.iter().any(|&ti| ti == 1) {
        return Err(Error::SingleArm { missing: "treated" });
    }
    if !t.iter().any(|&ti| ti == 0) {
        return Err(Error::SingleArm { missing: "control" });
    }
    let dim = x[0].len();
    let arch = NetworkArchitecture::new(dim, config.hidden.clone(), 1)?;
    let model = LogisticModel::new(arch.clone(), x, t)?;
    let chain = run_chain_on_stream(&model, &config.hyper, &config.sampler, 0)?;

    let mut ws = Workspace::new(&arch);
    let mut probs = Vec::with_capacity(chain.len());
    for w in &chain.weights {
        let row: Vec<f64> = (0..t.len())
            .map(|i| clamp_prob(sigmoid(forward(w, model.input(i), &mut ws)[0])))
            .collect();
        probs.push(row);
    }
    Ok(PropensityDraws {
        probs,
        fitted: Some(Fitted {
            arch,
            weights: chain.weights,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::testutil::finite_diff_grad;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn synthetic(n: usize, seed: u64, logit: impl Fn(f64) -> f64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = stream_rng(seed, 0);
        let mut x = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let p = sigmoid(logit(xi));
            x.push(vec![xi]);
            t.push(u8::from(rng.random::<f64>() < p));
        }
        (x, t)
    }

    fn quick_config(seed: u64) -> PropensityConfig {
        PropensityConfig {
            hidden: vec![4],
            sampler: SamplerConfig {
                n_iter: 500,
                n_burnin: 250,
                thin: 50,
                seed,
                ..SamplerConfig::default()
            },
            ..PropensityConfig::default()
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let arch = NetworkArchitecture::new(2, vec![3], 1).unwrap();
        let mut rng = stream_rng(5, 0);
        let x: Vec<Vec<f64>> = (0..12)
            .map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let t: Vec<u8> = (0..12).map(|i| (i % 2) as u8).collect();
        let model = LogisticModel::new(arch.clone(), &x, &t).unwrap();
        let weights = NetworkWeights::sample_gaussian(&arch, 0.5, &mut rng);

        let mut ws = Workspace::new(&arch);
        let mut grad = vec![0.0; arch.num_params()];
        model.log_lik_grad(&weights, Some(&mut grad), &mut ws);

        let f = |flat: &[f64]| {
            let w = NetworkWeights::from_flat(&arch, flat.to_vec()).unwrap();
            let mut ws = Workspace::new(&arch);
            model.log_lik_grad(&w, None, &mut ws)
        };
        let fd = finite_diff_grad(&f, weights.as_flat(), 1e-5);
        for (g, d) in grad.iter().zip(&fd) {
            let err = (g - d).abs() / g.abs().max(d.abs()).max(1.0);
            assert!(err < 1e-6, "grad {g} vs fd {d}");
        }
    }

    #[test]
    fn logistic_loglik_matches_direct_formula() {
        let arch = NetworkArchitecture::new(1, vec![], 1).unwrap();
        // Weights [b, w]: logit = b + w x.
        let weights = NetworkWeights::from_flat(&arch, vec![0.3, -1.1]).unwrap();
        let x = vec![vec![0.5], vec![-2.0]];
        let t = vec![1, 0];
        let model = LogisticModel::new(arch.clone(), &x, &t).unwrap();
        let mut ws = Workspace::new(&arch);
        let got = model.log_lik_grad(&weights, None, &mut ws);
        let z0: f64 = 0.3 - 1.1 * 0.5;
        let z1: f64 = 0.3 + 1.1 * 2.0;
        let want = z0 - (1.0 + z0.exp()).ln() - (1.0 + z1.exp()).ln();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn randomized_design_recovers_half() {
        // Assignment ignores the covariate, so every fitted
        // probability should hover near one half.
        let (x, t) = synthetic(400, 31, |_| 0.0);
        let draws = fit_propensity(&x, &t, &quick_config(31)).unwrap();
        assert_eq!(draws.num_draws(), 5);
        assert_eq!(draws.num_obs(), 400);
        let mut sum = 0.0;
        let mut count = 0.0;
        for j in 0..draws.num_draws() {
            for &p in draws.draw(j) {
                sum += p;
                count += 1.0;
            }
        }
        let mean = sum / count;
        assert!((mean - 0.5).abs() < 0.05, "mean fitted propensity {mean}");
    }

    #[test]
    fn confounded_design_orders_probabilities() {
        // Larger x means higher assignment probability; the fit must
        // reproduce that ordering on average.
        let (x, t) = synthetic(400, 77, |xi| 1.5 * xi);
        let draws = fit_propensity(&x, &t, &quick_config(77)).unwrap();
        let j = draws.num_draws() - 1;
        let mut high = 0.0;
        let mut low = 0.0;
        let mut nh = 0.0;
        let mut nl = 0.0;
        for (row, p) in x.iter().zip(draws.draw(j)) {
            if row[0] > 0.5 {
                high += p;
                nh += 1.0;
            } else if row[0] < -0.5 {
                low += p;
                nl += 1.0;
            }
        }
        assert!(high / nh > low / nl + 0.2, "no separation in fit");
    }

    #[test]
    fn interceptless_inputs_fit_marginal_rate() {
        // Zero-width covariates leave only the bias path, so the fit
        // is the marginal treated fraction.
        let x: Vec<Vec<f64>> = vec![vec![]; 200];
        let mut t = vec![0u8; 200];
        for ti in t.iter_mut().take(60) {
            *ti = 1;
        }
        let mut config = quick_config(13);
        config.hidden = vec![];
        let draws = fit_propensity(&x, &t, &config).unwrap();
        let j = draws.num_draws() - 1;
        let p = draws.draw(j)[0];
        assert!((p - 0.3).abs() < 0.08, "fitted rate {p}");
        // All units share one covariate row, so one probability.
        assert!(draws.draw(j).iter().all(|&q| (q - p).abs() < 1e-12));
    }

    #[test]
    fn fitted_draws_predict_out_of_sample() {
        let (x, t) = synthetic(300, 9, |xi| xi);
        let draws = fit_propensity(&x, &t, &quick_config(9)).unwrap();
        let p = draws.predict(0, &[0.0]).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!(draws.predict(0, &[0.0, 1.0]).is_err());
        assert!(draws.predict(99, &[0.0]).is_err());
        assert!(draws.predict(0, &[f64::NAN]).is_err());
    }

    #[test]
    fn known_propensities_validate_open_interval() {
        let draws = PropensityDraws::known(&[0.2, 0.5, 0.9]).unwrap();
        assert_eq!(draws.num_draws(), 1);
        assert_eq!(draws.draw(0), &[0.2, 0.5, 0.9]);
        assert!(draws.predict(0, &[0.0]).is_err());
        for bad in [0.0, 1.0, -0.2, 1.4, f64::NAN] {
            assert!(
                PropensityDraws::known(&[0.5, bad]).is_err(),
                "accepted {bad}"
            );
        }
        assert!(PropensityDraws::known(&[]).is_err());
    }

    #[test]
    fn constant_draw_fills_all_units() {
        let draws = PropensityDraws::constant(0.5, 4).unwrap();
        assert_eq!(draws.draw(0), &[0.5; 4]);
        assert!(PropensityDraws::constant(1.0, 4).is_err());
        assert!(PropensityDraws::constant(0.5, 0).is_err());
    }

    #[test]
    fn rows_validate_shape_and_clamp() {
        let draws =
            PropensityDraws::from_rows(vec![vec![0.2, 1e-9], vec![0.6, 1.0 - 1e-9]]).unwrap();
        assert_eq!(draws.num_draws(), 2);
        assert_eq!(draws.draw(0), &[0.2, PROB_CLAMP]);
        assert_eq!(draws.draw(1), &[0.6, 1.0 - PROB_CLAMP]);
        let ragged = PropensityDraws::from_rows(vec![vec![0.2], vec![0.6, 0.7]]);
        assert!(matches!(ragged.unwrap_err(), Error::ShapeMismatch(_)));
        assert!(PropensityDraws::from_rows(vec![]).is_err());
    }

    #[test]
    fn single_arm_data_is_rejected() {
        let x = vec![vec![0.0]; 10];
        let all_treated = vec![1u8; 10];
        let err = fit_propensity(&x, &all_treated, &quick_config(1)).unwrap_err();
        assert!(matches!(err, Error::SingleArm { missing: "control" }));
        let none_treated = vec![0u8; 10];
        let err = fit_propensity(&x, &none_treated, &quick_config(1)).unwrap_err();
        assert!(matches!(err, Error::SingleArm { missing: "treated" }));
    }

    #[test]
    fn fitted_probabilities_stay_clamped() {
        // Perfectly separated labels push logits to extremes; the
        // clamp must keep every probability inside the open interval.
        let x: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![if i < 30 { -5.0 } else { 5.0 }])
            .collect();
        let t: Vec<u8> = (0..60).map(|i| u8::from(i >= 30)).collect();
        let draws = fit_propensity(&x, &t, &quick_config(3)).unwrap();
        for j in 0..draws.num_draws() {
            for &p in draws.draw(j) {
                assert!((PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p));
            }
        }
    }

    #[test]
    fn refit_with_same_seed_is_identical() {
        let (x, t) = synthetic(150, 21, |xi| 0.5 * xi);
        let a = fit_propensity(&x, &t, &quick_config(21)).unwrap();
        let b = fit_propensity(&x, &t, &quick_config(21)).unwrap();
        for j in 0..a.num_draws() {
            assert_eq!(a.draw(j), b.draw(j));
        }
    }

    #[test]
    fn default_schedule_keeps_five_draws() {
        let config = PropensityConfig::default();
        assert_eq!(config.sampler.num_draws(), 5);
        assert_eq!(config.hidden, vec![10]);
    }

    #[test]
    fn labels_outside_binary_are_rejected() {
        let arch = NetworkArchitecture::new(1, vec![], 1).unwrap();
        let err = LogisticModel::new(arch, &[vec![0.0]], &[2]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
