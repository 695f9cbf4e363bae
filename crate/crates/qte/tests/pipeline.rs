//! Cross-module pipeline checks at moderate scale: the acceptance
//! suite in the command-line crate exercises full-size studies, so
//! these stay small enough for routine runs.

use qte::counterfactual::{estimate, summarize, EstimateConfig, ScoreSource};
use qte::propensity::PropensityDraws;
use qte::rng::stream_rng;
use qte::sampler::SamplerConfig;
use qte::simulate::{generate_null, generate_replicate, Design};

fn short_config(seed: u64) -> EstimateConfig {
    EstimateConfig {
        basis_size: 8,
        hidden: vec![5],
        sampler: SamplerConfig {
            n_iter: 400,
            n_burnin: 200,
            thin: 4,
            seed,
            ..SamplerConfig::default()
        },
        grid_size: 80,
        ..EstimateConfig::default()
    }
}

#[test]
fn exponential_design_chain_stays_nondivergent() {
    let sim = generate_replicate(Design::from_id(4, 0).unwrap(), 250, 5, 1).unwrap();
    let data = sim.to_dataset().unwrap();
    // The generator's own propensities stand in for a fitted model.
    let prop = PropensityDraws::known(&sim.pi).unwrap();
    let draws = estimate(&data, ScoreSource::Double(&prop), &short_config(17)).unwrap();
    for (i, &rate) in draws.divergence_rates().iter().enumerate() {
        assert!(
            rate < 0.05,
            "configuration {i} diverged on {:.1}% of transitions",
            rate * 100.0
        );
    }
    assert!(draws.step_sizes().iter().all(|&e| e > 0.0));
}

#[test]
fn null_data_fit_tracks_empirical_arm_distributions() {
    let mut rng = stream_rng(23, 1);
    let sim = generate_null(400, 2.0, &mut rng).unwrap();
    let data = sim.to_dataset().unwrap();
    let prop = PropensityDraws::constant(0.5, data.len()).unwrap();
    let draws = estimate(&data, ScoreSource::PropensityOnly(&prop), &short_config(29)).unwrap();
    let summary = summarize(&draws, &[0.25, 0.5, 0.75], 0.9).unwrap();

    // Both fitted marginals must stay near the pooled empirical CDF.
    let mut pooled: Vec<f64> = data.y().to_vec();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ecdf = |y: f64| {
        let k = pooled.partition_point(|&v| v <= y);
        k as f64 / pooled.len() as f64
    };
    for arm in 0..2 {
        let sup = summary
            .curve
            .iter()
            .map(|p| (p.cdf[arm].mean - ecdf(p.y)).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.1, "arm {arm} drifts {sup:.3} from the empirical CDF");
    }

    // Exchangeable arms: the median effect interval must cover zero.
    let median = &summary.quantiles[1];
    assert!(
        median.delta.lo <= 0.0 && 0.0 <= median.delta.hi,
        "median effect interval [{:.3}, {:.3}] misses zero",
        median.delta.lo,
        median.delta.hi
    );
}
