//! Conjugate Gibbs updates for the scale-mixture precisions.
//!
//! Conditional on the weights, each layer precision kappa_l and each
//! input-unit precision omega_lj is Gamma; one sweep refreshes all
//! kappas first, then all omegas using the fresh kappas.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::network::{GsmHyperParams, NetworkWeights, PrecisionState};

/// Shape-rate parameters of a Gamma full conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

/// Full conditional of the layer precision kappa_l: shape a + n_l/2,
/// rate b + (1/2) sum_{r,j} omega_lj W_lrj^2 with n_l the number of
/// weights in the layer, biases included.
pub fn kappa_conditional(
    weights: &NetworkWeights,
    precisions: &PrecisionState,
    layer: usize,
    hyper: &GsmHyperParams,
) -> GammaParams {
    let (rows, cols) = weights.layer_dims(layer);
    let mut ssq = 0.0;
    for r in 0..rows {
        let row = weights.row(layer, r);
        for (j, w) in row.iter().enumerate() {
            ssq += precisions.omega(layer, j) * w * w;
        }
    }
    GammaParams {
        shape: hyper.a_kappa + (rows * cols) as f64 / 2.0,
        rate: hyper.b_kappa + 0.5 * ssq,
    }
}

/// Full conditional of the unit precision omega_lj: shape a + m/2,
/// rate b + (1/2) kappa_l sum_r W_lrj^2 with m the number of weights
/// leaving unit j (the layer's output width).
pub fn omega_conditional(
    weights: &NetworkWeights,
    precisions: &PrecisionState,
    layer: usize,
    j: usize,
    hyper: &GsmHyperParams,
) -> GammaParams {
    let (rows, _) = weights.layer_dims(layer);
    let mut ssq = 0.0;
    for r in 0..rows {
        let w = weights.row(layer, r)[j];
        ssq += w * w;
    }
    GammaParams {
        shape: hyper.a_omega + rows as f64 / 2.0,
        rate: hyper.b_omega + 0.5 * precisions.kappa(layer) * ssq,
    }
}

fn draw_gamma<R: Rng>(params: GammaParams, rng: &mut R) -> f64 {
    let g = Gamma::new(params.shape, 1.0 / params.rate)
        .expect("conditional shape and rate are positive");
    g.sample(rng).max(f64::MIN_POSITIVE)
}

/// One full sweep over all precision parameters.
pub(crate) fn gibbs_sweep<R: Rng>(
    weights: &NetworkWeights,
    precisions: &mut PrecisionState,
    hyper: &GsmHyperParams,
    rng: &mut R,
) {
    for l in 0..weights.num_layers() {
        let params = kappa_conditional(weights, precisions, l, hyper);
        precisions.set_kappa(l, draw_gamma(params, rng));
    }
    for l in 0..weights.num_layers() {
        let (_, cols) = weights.layer_dims(l);
        for j in 0..cols {
            let params = omega_conditional(weights, precisions, l, j, hyper);
            precisions.set_omega(l, j, draw_gamma(params, rng));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkArchitecture;
    use crate::rng::stream_rng;
    use crate::testutil::mean;

    fn hyper() -> GsmHyperParams {
        GsmHyperParams::default()
    }

    #[test]
    fn kappa_conditional_matches_hand_example() {
        // Layer of 4 unit weights with unit omegas: Gamma(0.01 + 2,
        // 0.01 + 2).
        let a = NetworkArchitecture::new(1, vec![], 2).unwrap();
        assert_eq!(a.num_params(), 4);
        let w = NetworkWeights::from_flat(&a, vec![1.0; 4]).unwrap();
        let prec = PrecisionState::ones(&a);
        let p = kappa_conditional(&w, &prec, 0, &hyper());
        assert!((p.shape - 2.01).abs() < 1e-15);
        assert!((p.rate - 2.01).abs() < 1e-15);
    }

    #[test]
    fn omega_conditional_matches_hand_example() {
        // A unit with 2 outgoing unit weights and kappa 1:
        // Gamma(0.01 + 1, 0.01 + 1).
        let a = NetworkArchitecture::new(1, vec![], 2).unwrap();
        let w = NetworkWeights::from_flat(&a, vec![1.0; 4]).unwrap();
        let prec = PrecisionState::ones(&a);
        let p = omega_conditional(&w, &prec, 0, 1, &hyper());
        assert!((p.shape - 1.01).abs() < 1e-15);
        assert!((p.rate - 1.01).abs() < 1e-15);
    }

    #[test]
    fn conditionals_match_naive_recomputation() {
        let a = NetworkArchitecture::new(3, vec![4], 5).unwrap();
        let mut rng = stream_rng(31, 0);
        let w = NetworkWeights::sample_gaussian(&a, 1.3, &mut rng);
        let mut prec = PrecisionState::ones(&a);
        for l in 0..prec.num_layers() {
            prec.set_kappa(l, 0.2 + l as f64);
            for j in 0..prec.num_units(l) {
                prec.set_omega(l, j, 0.1 + 0.3 * j as f64);
            }
        }
        let h = GsmHyperParams {
            a_kappa: 0.7,
            b_kappa: 1.3,
            a_omega: 0.4,
            b_omega: 2.2,
        };
        for l in 0..2 {
            let (rows, cols) = w.layer_dims(l);
            let mut ssq = 0.0;
            for r in 0..rows {
                for j in 0..cols {
                    ssq += prec.omega(l, j) * w.row(l, r)[j] * w.row(l, r)[j];
                }
            }
            let p = kappa_conditional(&w, &prec, l, &h);
            assert!((p.shape - (0.7 + (rows * cols) as f64 / 2.0)).abs() < 1e-12);
            assert!((p.rate - (1.3 + ssq / 2.0)).abs() < 1e-12);

            for j in 0..cols {
                let mut col_ssq = 0.0;
                for r in 0..rows {
                    col_ssq += w.row(l, r)[j] * w.row(l, r)[j];
                }
                let p = omega_conditional(&w, &prec, l, j, &h);
                assert!((p.shape - (0.4 + rows as f64 / 2.0)).abs() < 1e-12);
                assert!((p.rate - (2.2 + prec.kappa(l) * col_ssq / 2.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma_draw_means_match_conditionals() {
        let params = GammaParams {
            shape: 2.01,
            rate: 2.01,
        };
        let mut rng = stream_rng(77, 0);
        let draws: Vec<f64> = (0..100_000).map(|_| draw_gamma(params, &mut rng)).collect();
        let expected = params.shape / params.rate;
        assert!((mean(&draws) - expected).abs() / expected < 0.02);
        assert!(draws.iter().all(|d| *d > 0.0));
    }

    #[test]
    fn large_weights_shrink_the_precision() {
        let a = NetworkArchitecture::new(1, vec![], 2).unwrap();
        let small = NetworkWeights::from_flat(&a, vec![0.01; 4]).unwrap();
        let large = NetworkWeights::from_flat(&a, vec![10.0; 4]).unwrap();
        let prec = PrecisionState::ones(&a);
        let ps = kappa_conditional(&small, &prec, 0, &hyper());
        let pl = kappa_conditional(&large, &prec, 0, &hyper());
        assert!(ps.shape / ps.rate > pl.shape / pl.rate);
    }

    #[test]
    fn sweep_is_deterministic_and_positive() {
        let a = NetworkArchitecture::new(2, vec![3], 4).unwrap();
        let w = NetworkWeights::sample_gaussian(&a, 1.0, &mut stream_rng(5, 0));
        let mut p1 = PrecisionState::ones(&a);
        let mut p2 = PrecisionState::ones(&a);
        gibbs_sweep(&w, &mut p1, &hyper(), &mut stream_rng(9, 1));
        gibbs_sweep(&w, &mut p2, &hyper(), &mut stream_rng(9, 1));
        assert_eq!(p1, p2);
        for l in 0..p1.num_layers() {
            assert!(p1.kappa(l) > 0.0);
            for j in 0..p1.num_units(l) {
                assert!(p1.omega(l, j) > 0.0);
            }
        }
    }
}
