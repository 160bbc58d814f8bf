//! Independent central finite-difference oracle for the analytic gradients.

use crate::backward::{backward, effective_lambda};
use crate::graph::FrameInstance;
use crate::inference::forward;
use crate::loss::loss;
use crate::params::{ModelParams, ParamGroup};
use crate::train::{Phase, TrainConfig};
use crate::Result;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Scalar loss as a function of the parameters, via a full forward pass.
fn loss_value(params: &ModelParams, inst: &FrameInstance, config: &TrainConfig) -> Result<f64> {
    let trace = forward(params, inst, config.steps)?;
    Ok(loss(&trace, effective_lambda(params, config.lambda))?.total)
}

/// Compares every analytic gradient entry against a two-sided finite
/// difference and returns the maximum relative error
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// Entries frozen by the configured phase are skipped; they are excluded from
/// the optimizer as well, so their analytic gradient is zeroed by contract.
pub fn finite_diff_oracle(
    params: &ModelParams,
    inst: &FrameInstance,
    config: &TrainConfig,
    epsilon: f64,
) -> Result<f64> {
    let (_, grads) = backward(params, inst, config)?;
    let frozen = match config.phase {
        Phase::Joint => None,
        Phase::PredictorsOnly => Some(ParamGroup::Gate),
        Phase::GatesOnly => Some(ParamGroup::Predictor),
    };

    let mut max_rel = 0.0f64;
    for b in 0..params.blocks.len() {
        let analytic: Vec<(ParamGroup, f64)> = grads.blocks[b].entries().collect();
        for (idx, (group, analytic_val)) in analytic.into_iter().enumerate() {
            if frozen == Some(group) {
                continue;
            }
            let mut plus = params.clone();
            *plus.blocks[b].entries_mut()[idx].1 += epsilon;
            let mut minus = params.clone();
            *minus.blocks[b].entries_mut()[idx].1 -= epsilon;
            let numeric =
                (loss_value(&plus, inst, config)? - loss_value(&minus, inst, config)?)
                    / (2.0 * epsilon);
            let rel = (analytic_val - numeric).abs()
                / f64::max(1e-8, analytic_val.abs() + numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Dims;
    use crate::params::{init_params, WeightMode};

    fn seeded_instance(m: usize, a: usize, s: usize, seed: u64) -> FrameInstance {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut simplex = |n: usize| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect::<Vec<f64>>()
        };
        let scene_unary = simplex(s);
        let person_unaries = (0..m).map(|_| simplex(a)).collect();
        FrameInstance {
            scene_unary,
            person_unaries,
            scene_label: Some(1 % s),
            action_labels: Some((0..m).map(|i| i % a).collect()),
        }
    }

    fn cfg(steps: usize, mode: WeightMode, gated: bool, lambda: f64) -> TrainConfig {
        TrainConfig {
            steps,
            mode,
            gated,
            lambda,
            learning_rate: 0.1,
            momentum: 0.0,
            epochs: 1,
            batch_size: 1,
            seed: 0,
            phase: Phase::Joint,
        }
    }

    #[test]
    fn gated_untied_three_steps_matches_finite_differences() {
        let dims = Dims::new(5, 4).unwrap();
        let params = init_params(&dims, 3, WeightMode::Untied, true, 123).unwrap();
        let inst = seeded_instance(4, 5, 4, 7);
        let c = cfg(3, WeightMode::Untied, true, 0.03);
        let err = finite_diff_oracle(&params, &inst, &c, DEFAULT_EPSILON).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn single_person_topology_matches_finite_differences() {
        let dims = Dims::new(5, 4).unwrap();
        let params = init_params(&dims, 3, WeightMode::Tied, true, 31).unwrap();
        let inst = seeded_instance(1, 5, 4, 9);
        let c = cfg(3, WeightMode::Tied, true, 0.01);
        let err = finite_diff_oracle(&params, &inst, &c, DEFAULT_EPSILON).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn ungated_tied_single_step_matches_finite_differences() {
        let dims = Dims::new(5, 4).unwrap();
        let params = init_params(&dims, 1, WeightMode::Tied, false, 55).unwrap();
        let inst = seeded_instance(3, 5, 4, 11);
        let c = cfg(1, WeightMode::Tied, false, 0.0);
        let err = finite_diff_oracle(&params, &inst, &c, DEFAULT_EPSILON).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn absurd_epsilon_breaks_the_comparison() {
        let dims = Dims::new(4, 3).unwrap();
        let params = init_params(&dims, 2, WeightMode::Tied, true, 3).unwrap();
        let inst = seeded_instance(3, 4, 3, 3);
        let c = cfg(2, WeightMode::Tied, true, 0.01);
        let err = finite_diff_oracle(&params, &inst, &c, 10.0).unwrap();
        assert!(err > 1e-4, "huge epsilon should not look exact, got {err}");
    }
}
