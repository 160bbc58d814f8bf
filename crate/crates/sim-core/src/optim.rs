//! SGD with classical momentum.

use serde::{Deserialize, Serialize};

use crate::backward::Gradients;
use crate::error::SimError;
use crate::params::{ModelParams, ParamBlockSet};
use crate::Result;

/// Momentum buffers, block-for-block the same shape as the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Velocity {
    pub blocks: Vec<ParamBlockSet>,
}

impl Velocity {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Velocity {
            blocks: params
                .blocks
                .iter()
                .map(|_| ParamBlockSet::zeros(&params.dims))
                .collect(),
        }
    }
}

/// One update: `v <- momentum * v - lr * g; theta <- theta + v`, applied to
/// every entry. Frozen parameters stay put because their gradients arrive
/// masked to zero and each training phase starts from zero velocity.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &Gradients,
    velocity: &mut Velocity,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if grads.blocks.len() != params.blocks.len() || velocity.blocks.len() != params.blocks.len() {
        return Err(SimError::DimMismatch(format!(
            "expected {} gradient/velocity blocks, got {}/{}",
            params.blocks.len(),
            grads.blocks.len(),
            velocity.blocks.len()
        )));
    }
    for b in 0..params.blocks.len() {
        let grad_entries: Vec<f64> = grads.blocks[b].entries().map(|(_, v)| v).collect();
        let param_entries = params.blocks[b].entries_mut();
        let vel_entries = velocity.blocks[b].entries_mut();
        if grad_entries.len() != param_entries.len() {
            return Err(SimError::DimMismatch(
                "gradient shape does not match parameters".into(),
            ));
        }
        for (((_, theta), (_, v)), g) in param_entries
            .into_iter()
            .zip(vel_entries)
            .zip(grad_entries)
        {
            *v = momentum * *v - learning_rate * g;
            *theta += *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Dims;
    use crate::params::{init_params, WeightMode};

    fn setup() -> (ModelParams, Gradients, Velocity) {
        let dims = Dims::new(3, 3).unwrap();
        let params = init_params(&dims, 1, WeightMode::Tied, true, 7).unwrap();
        let grads = Gradients::zeros_like(&params);
        let velocity = Velocity::zeros_like(&params);
        (params, grads, velocity)
    }

    #[test]
    fn zero_momentum_is_plain_gradient_descent() {
        let (mut params, mut grads, mut vel) = setup();
        params.blocks[0].w_aa.set(0, 0, 1.0);
        grads.blocks[0].w_aa.set(0, 0, 2.0);
        sgd_step(&mut params, &grads, &mut vel, 0.1, 0.0).unwrap();
        assert!((params.blocks[0].w_aa.at(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_decays_velocity_only() {
        let (mut params, grads, mut vel) = setup();
        vel.blocks[0].w_aa.set(0, 0, 1.0);
        let before = params.blocks[0].w_aa.at(0, 0);
        sgd_step(&mut params, &grads, &mut vel, 0.5, 0.9).unwrap();
        // parameter moved by the decayed velocity; velocity itself decayed
        assert!((vel.blocks[0].w_aa.at(0, 0) - 0.9).abs() < 1e-15);
        assert!((params.blocks[0].w_aa.at(0, 0) - (before + 0.9)).abs() < 1e-15);
        // with zero initial velocity and zero gradient nothing moves
        let (mut params2, grads2, mut vel2) = setup();
        let snapshot = params2.clone();
        sgd_step(&mut params2, &grads2, &mut vel2, 0.5, 0.9).unwrap();
        assert_eq!(params2, snapshot);
    }

    #[test]
    fn block_count_mismatch_is_rejected() {
        let (mut params, mut grads, mut vel) = setup();
        grads.blocks.push(grads.blocks[0].clone());
        assert!(sgd_step(&mut params, &grads, &mut vel, 0.1, 0.0).is_err());
    }
}
