//! Hand-written reverse-mode gradients through the unrolled inference graph.
//!
//! The sweep walks timesteps from last to first. Within a step it unwinds the
//! forward order exactly: prediction layers, the gate L1 penalty, the
//! gate-times-message products, the directional gates, and finally the raw
//! message softmaxes, whose upstream contributions flow into the previous
//! step's gated messages and predictions.

use crate::error::SimError;
use crate::graph::FrameInstance;
use crate::inference::{
    forward, gate_field_pp, gate_field_ps, gate_field_sp, masked_average, InferenceTrace,
};
use crate::linalg::{axpy, dot, scale, softmax_backward};
use crate::loss::{loss, LossBreakdown};
use crate::params::{ModelParams, ParamBlockSet, ParamGroup};
use crate::train::{Phase, TrainConfig};
use crate::Result;

/// Structural mirror of [`ModelParams`]: one block set in tied mode, one per
/// timestep in untied mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<ParamBlockSet>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            blocks: params
                .blocks
                .iter()
                .map(|_| ParamBlockSet::zeros(&params.dims))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        assert_eq!(self.blocks.len(), other.blocks.len());
        for (mine, theirs) in self.blocks.iter_mut().zip(&other.blocks) {
            let snapshot: Vec<f64> = theirs.entries().map(|(_, v)| v).collect();
            for ((_, dst), src) in mine.entries_mut().into_iter().zip(snapshot) {
                *dst += src;
            }
        }
    }
}

/// Adjoints of the recurrent state flowing from step `t` back to step `t-1`.
struct StateAdjoint {
    gated_pp: Vec<Vec<Vec<f64>>>,
    gated_ps: Vec<Vec<f64>>,
    gated_sp: Vec<Vec<f64>>,
    scene_pred: Vec<f64>,
    person_preds: Vec<Vec<f64>>,
}

impl StateAdjoint {
    fn zeros(m: usize, a: usize, s: usize) -> Self {
        StateAdjoint {
            gated_pp: vec![vec![vec![0.0; a]; m]; m],
            gated_ps: vec![vec![0.0; a]; m],
            gated_sp: vec![vec![0.0; s]; m],
            scene_pred: vec![0.0; s],
            person_preds: vec![vec![0.0; a]; m],
        }
    }
}

/// The L1 coefficient that actually enters the loss: gates only exist in the
/// computation graph of a gated model.
pub fn effective_lambda(params: &ModelParams, lambda: f64) -> f64 {
    if params.gated {
        lambda
    } else {
        0.0
    }
}

/// Exact gradient of `loss ∘ forward` for one labeled instance.
///
/// Tied mode sums the per-step contributions into the single block set. The
/// phase in `config` masks whole parameter groups: predictors-only zeroes
/// gate-weight gradients, gates-only zeroes message/prediction gradients.
pub fn backward(
    params: &ModelParams,
    inst: &FrameInstance,
    config: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let trace = forward(params, inst, config.steps)?;
    backward_from_trace(params, &trace, config)
}

/// Same as [`backward`] but reuses an existing forward trace.
pub fn backward_from_trace(
    params: &ModelParams,
    trace: &InferenceTrace,
    config: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let inst = &trace.instance;
    let scene_label = inst.scene_label.ok_or(SimError::MissingLabels("scene"))?;
    let action_labels = inst
        .action_labels
        .as_ref()
        .ok_or(SimError::MissingLabels("action"))?;
    let m = inst.num_persons();
    let a = params.dims.actions;
    let s = params.dims.scenes;
    let lambda = effective_lambda(params, config.lambda);
    let breakdown = loss(trace, lambda)?;

    let mut grads = Gradients::zeros_like(params);
    let mut adj = StateAdjoint::zeros(m, a, s);

    for t in (1..=trace.steps).rev() {
        let blocks = params.block_for_step(t);
        let gb = &mut grads.blocks[params.block_index(t)];
        let state = &trace.states[t - 1];
        let preds = &trace.preds[t - 1];
        let prev_state = trace.state_before(t);
        let prev_preds = trace.preds_before(t);
        let mut prev_adj = StateAdjoint::zeros(m, a, s);

        // Cross-entropy at this step.
        adj.scene_pred[scene_label] -= 1.0 / preds.scene[scene_label];
        for (i, &label) in action_labels.iter().enumerate() {
            adj.person_preds[i][label] -= 1.0 / (m as f64 * preds.persons[i][label]);
        }

        // Scene prediction layer.
        {
            let dz = softmax_backward(&preds.scene, &adj.scene_pred);
            let pooled = masked_average(m, a, &[], |k| &state.gated_ps[k]);
            let mut ctx = Vec::with_capacity(s + a);
            ctx.extend_from_slice(&inst.scene_unary);
            ctx.extend_from_slice(&pooled);
            gb.w_hc1.add_outer(&dz, &ctx);
            axpy(1.0, &dz, &mut gb.b_hc1);
            let h = blocks.w_hc1.matvec_t(&dz);
            let inv = 1.0 / m as f64;
            for k in 0..m {
                axpy(inv, &h[s..s + a], &mut adj.gated_ps[k]);
            }
        }

        // Person prediction layers.
        for i in 0..m {
            let dz = softmax_backward(&preds.persons[i], &adj.person_preds[i]);
            let pooled = masked_average(m, a, &[i], |k| &state.gated_pp[k][i]);
            let mut ctx = Vec::with_capacity(2 * a + s);
            ctx.extend_from_slice(&inst.person_unaries[i]);
            ctx.extend_from_slice(&pooled);
            ctx.extend_from_slice(&state.gated_sp[i]);
            gb.w_hc2.add_outer(&dz, &ctx);
            axpy(1.0, &dz, &mut gb.b_hc2);
            let h = blocks.w_hc2.matvec_t(&dz);
            if m > 1 {
                let inv = 1.0 / (m - 1) as f64;
                for k in 0..m {
                    if k != i {
                        axpy(inv, &h[a..2 * a], &mut adj.gated_pp[k][i]);
                    }
                }
            }
            axpy(1.0, &h[2 * a..2 * a + s], &mut adj.gated_sp[i]);
        }

        // Gated products, edge-gate adjoints, and the L1 term.
        let mut d_raw_pp = vec![vec![vec![0.0; a]; m]; m];
        let mut d_raw_ps = vec![vec![0.0; a]; m];
        let mut d_raw_sp = vec![vec![0.0; s]; m];
        let mut d_edge_pp = vec![vec![0.0; m]; m]; // canonical slot [i][j], i < j
        let mut d_edge_ps = vec![0.0; m];

        if params.gated && lambda != 0.0 {
            for i in 0..m {
                for j in (i + 1)..m {
                    d_edge_pp[i][j] += lambda;
                }
                d_edge_ps[i] += lambda;
            }
        }
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                axpy(state.gate_pp[i][j], &adj.gated_pp[i][j], &mut d_raw_pp[i][j]);
                if params.gated {
                    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                    d_edge_pp[lo][hi] += dot(&state.m_pp[i][j], &adj.gated_pp[i][j]);
                }
            }
            axpy(state.gate_ps[i], &adj.gated_ps[i], &mut d_raw_ps[i]);
            axpy(state.gate_ps[i], &adj.gated_sp[i], &mut d_raw_sp[i]);
            if params.gated {
                d_edge_ps[i] += dot(&state.m_ps[i], &adj.gated_ps[i])
                    + dot(&state.m_sp[i], &adj.gated_sp[i]);
            }
        }

        // Directional gates. Each edge gate is the mean of its two directions;
        // a gate is sigmoid(msg . field + bias), so the message picks up
        // gradient both directly and through its own block of the field.
        if params.gated {
            for i in 0..m {
                for j in (i + 1)..m {
                    let d_edge = d_edge_pp[i][j];
                    if d_edge == 0.0 {
                        continue;
                    }
                    for (src, dst) in [(i, j), (j, i)] {
                        let g = state.dir_pp[src][dst];
                        let du = 0.5 * d_edge * g * (1.0 - g);
                        let msg = &state.m_pp[src][dst];
                        let field = gate_field_pp(blocks, state, prev_preds, inst, src, dst);
                        let pooled = masked_average(m, a, &[src, dst], |k| &state.m_pp[k][dst]);
                        let dmsg_outer = scale(msg, du);
                        gb.g_pp_x.add_outer(&dmsg_outer, &inst.person_unaries[dst]);
                        gb.g_pp_c.add_outer(&dmsg_outer, &prev_preds.persons[dst]);
                        gb.g_pp_m.add_outer(&dmsg_outer, msg);
                        gb.g_pp_n.add_outer(&dmsg_outer, &pooled);
                        gb.g_pp_bias += du;
                        axpy(du, &field, &mut d_raw_pp[src][dst]);
                        axpy(du, &blocks.g_pp_m.matvec_t(msg), &mut d_raw_pp[src][dst]);
                        axpy(
                            du,
                            &blocks.g_pp_c.matvec_t(msg),
                            &mut prev_adj.person_preds[dst],
                        );
                        if m > 2 {
                            let q = blocks.g_pp_n.matvec_t(msg);
                            let inv = 1.0 / (m - 2) as f64;
                            for k in 0..m {
                                if k != src && k != dst {
                                    axpy(du * inv, &q, &mut d_raw_pp[k][dst]);
                                }
                            }
                        }
                    }
                }
            }
            for i in 0..m {
                let d_edge = d_edge_ps[i];
                if d_edge == 0.0 {
                    continue;
                }
                // person -> scene direction
                {
                    let g = state.dir_ps[i];
                    let du = 0.5 * d_edge * g * (1.0 - g);
                    let msg = &state.m_ps[i];
                    let field = gate_field_ps(blocks, state, prev_preds, inst, i);
                    let pooled = masked_average(m, a, &[i], |k| &state.m_ps[k]);
                    let dmsg_outer = scale(msg, du);
                    gb.g_ps_x.add_outer(&dmsg_outer, &inst.scene_unary);
                    gb.g_ps_c.add_outer(&dmsg_outer, &prev_preds.scene);
                    gb.g_ps_m.add_outer(&dmsg_outer, msg);
                    gb.g_ps_n.add_outer(&dmsg_outer, &pooled);
                    gb.g_ps_bias += du;
                    axpy(du, &field, &mut d_raw_ps[i]);
                    axpy(du, &blocks.g_ps_m.matvec_t(msg), &mut d_raw_ps[i]);
                    axpy(du, &blocks.g_ps_c.matvec_t(msg), &mut prev_adj.scene_pred);
                    if m > 1 {
                        let q = blocks.g_ps_n.matvec_t(msg);
                        let inv = 1.0 / (m - 1) as f64;
                        for k in 0..m {
                            if k != i {
                                axpy(du * inv, &q, &mut d_raw_ps[k]);
                            }
                        }
                    }
                }
                // scene -> person direction
                {
                    let g = state.dir_sp[i];
                    let du = 0.5 * d_edge * g * (1.0 - g);
                    let msg = &state.m_sp[i];
                    let field = gate_field_sp(blocks, state, prev_preds, inst, i);
                    let pooled = masked_average(m, a, &[i], |k| &state.m_pp[k][i]);
                    let dmsg_outer = scale(msg, du);
                    gb.g_sp_x.add_outer(&dmsg_outer, &inst.person_unaries[i]);
                    gb.g_sp_c.add_outer(&dmsg_outer, &prev_preds.persons[i]);
                    gb.g_sp_m.add_outer(&dmsg_outer, msg);
                    gb.g_sp_n.add_outer(&dmsg_outer, &pooled);
                    gb.g_sp_bias += du;
                    axpy(du, &field, &mut d_raw_sp[i]);
                    axpy(du, &blocks.g_sp_m.matvec_t(msg), &mut d_raw_sp[i]);
                    axpy(
                        du,
                        &blocks.g_sp_c.matvec_t(msg),
                        &mut prev_adj.person_preds[i],
                    );
                    if m > 1 {
                        let q = blocks.g_sp_n.matvec_t(msg);
                        let inv = 1.0 / (m - 1) as f64;
                        for k in 0..m {
                            if k != i {
                                axpy(du * inv, &q, &mut d_raw_pp[k][i]);
                            }
                        }
                    }
                }
            }
        }

        // Raw message softmaxes; upstream flows to the previous step.
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let dz = softmax_backward(&state.m_pp[i][j], &d_raw_pp[i][j]);
                let pooled = masked_average(m, a, &[i, j], |k| &prev_state.gated_pp[k][i]);
                gb.w_xm_p.add_outer(&dz, &inst.person_unaries[i]);
                gb.w_cm_p.add_outer(&dz, &prev_preds.persons[i]);
                gb.w_aa.add_outer(&dz, &pooled);
                gb.w_sa.add_outer(&dz, &prev_state.gated_sp[i]);
                axpy(1.0, &dz, &mut gb.b_pp);
                axpy(1.0, &blocks.w_cm_p.matvec_t(&dz), &mut prev_adj.person_preds[i]);
                axpy(1.0, &blocks.w_sa.matvec_t(&dz), &mut prev_adj.gated_sp[i]);
                if m > 2 {
                    let q = blocks.w_aa.matvec_t(&dz);
                    let inv = 1.0 / (m - 2) as f64;
                    for k in 0..m {
                        if k != i && k != j {
                            axpy(inv, &q, &mut prev_adj.gated_pp[k][i]);
                        }
                    }
                }
            }
        }
        for i in 0..m {
            let dz = softmax_backward(&state.m_ps[i], &d_raw_ps[i]);
            let pooled = masked_average(m, a, &[i], |k| &prev_state.gated_pp[k][i]);
            gb.w_xm_p.add_outer(&dz, &inst.person_unaries[i]);
            gb.w_cm_p.add_outer(&dz, &prev_preds.persons[i]);
            gb.w_aa.add_outer(&dz, &pooled);
            axpy(1.0, &dz, &mut gb.b_ps);
            axpy(1.0, &blocks.w_cm_p.matvec_t(&dz), &mut prev_adj.person_preds[i]);
            if m > 1 {
                let q = blocks.w_aa.matvec_t(&dz);
                let inv = 1.0 / (m - 1) as f64;
                for k in 0..m {
                    if k != i {
                        axpy(inv, &q, &mut prev_adj.gated_pp[k][i]);
                    }
                }
            }
        }
        for j in 0..m {
            let dz = softmax_backward(&state.m_sp[j], &d_raw_sp[j]);
            let pooled = masked_average(m, a, &[j], |k| &prev_state.gated_ps[k]);
            gb.w_xm_s.add_outer(&dz, &inst.scene_unary);
            gb.w_cm_s.add_outer(&dz, &prev_preds.scene);
            gb.w_as.add_outer(&dz, &pooled);
            axpy(1.0, &dz, &mut gb.b_sp);
            axpy(1.0, &blocks.w_cm_s.matvec_t(&dz), &mut prev_adj.scene_pred);
            if m > 1 {
                let q = blocks.w_as.matvec_t(&dz);
                let inv = 1.0 / (m - 1) as f64;
                for k in 0..m {
                    if k != j {
                        axpy(inv, &q, &mut prev_adj.gated_ps[k]);
                    }
                }
            }
        }

        adj = prev_adj;
    }

    mask_by_phase(&mut grads, config.phase);
    Ok((breakdown, grads))
}

/// Zeroes the gradient groups frozen by the given phase.
pub fn mask_by_phase(grads: &mut Gradients, phase: Phase) {
    let frozen = match phase {
        Phase::Joint => return,
        Phase::PredictorsOnly => ParamGroup::Gate,
        Phase::GatesOnly => ParamGroup::Predictor,
    };
    for block in &mut grads.blocks {
        for (group, v) in block.entries_mut() {
            if group == frozen {
                *v = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Dims;
    use crate::params::{init_params, WeightMode};
    use crate::train::TrainConfig;

    fn labeled_instance(m: usize, a: usize, s: usize, seed: u64) -> FrameInstance {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut simplex = |n: usize| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect::<Vec<f64>>()
        };
        let scene_unary = simplex(s);
        let person_unaries: Vec<Vec<f64>> = (0..m).map(|_| simplex(a)).collect();
        FrameInstance {
            scene_unary,
            person_unaries,
            scene_label: Some(seed as usize % s),
            action_labels: Some((0..m).map(|i| (i + seed as usize) % a).collect()),
        }
    }

    fn config(steps: usize, mode: WeightMode, gated: bool, lambda: f64) -> TrainConfig {
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
    fn ungated_model_has_zero_gate_gradients() {
        let dims = Dims::new(4, 3).unwrap();
        let params = init_params(&dims, 2, WeightMode::Tied, false, 40).unwrap();
        let inst = labeled_instance(3, 4, 3, 1);
        let cfg = config(2, WeightMode::Tied, false, 0.0);
        let (_, grads) = backward(&params, &inst, &cfg).unwrap();
        for block in &grads.blocks {
            for (group, v) in block.entries() {
                if group == ParamGroup::Gate {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn tied_gradient_is_the_sum_of_per_step_untied_gradients() {
        let dims = Dims::new(4, 3).unwrap();
        let tied = init_params(&dims, 2, WeightMode::Tied, true, 17).unwrap();
        let untied = crate::params::ModelParams {
            dims,
            mode: WeightMode::Untied,
            gated: true,
            blocks: vec![tied.blocks[0].clone(), tied.blocks[0].clone()],
        };
        let inst = labeled_instance(3, 4, 3, 2);
        let (_, g_tied) = backward(&tied, &inst, &config(2, WeightMode::Tied, true, 0.02)).unwrap();
        let (_, g_untied) =
            backward(&untied, &inst, &config(2, WeightMode::Untied, true, 0.02)).unwrap();
        let tied_entries: Vec<f64> = g_tied.blocks[0].entries().map(|(_, v)| v).collect();
        let u0: Vec<f64> = g_untied.blocks[0].entries().map(|(_, v)| v).collect();
        let u1: Vec<f64> = g_untied.blocks[1].entries().map(|(_, v)| v).collect();
        for ((t, a), b) in tied_entries.iter().zip(&u0).zip(&u1) {
            assert!((t - (a + b)).abs() < 1e-12, "{t} vs {}", a + b);
        }
    }

    #[test]
    fn phase_masks_zero_the_right_groups() {
        let dims = Dims::new(3, 3).unwrap();
        let params = init_params(&dims, 2, WeightMode::Tied, true, 9).unwrap();
        let inst = labeled_instance(3, 3, 3, 3);
        let mut cfg = config(2, WeightMode::Tied, true, 0.05);

        cfg.phase = Phase::GatesOnly;
        let (_, grads) = backward(&params, &inst, &cfg).unwrap();
        for (group, v) in grads.blocks[0].entries() {
            if group == ParamGroup::Predictor {
                assert_eq!(v, 0.0);
            }
        }
        assert!(grads.blocks[0].entries().any(|(g, v)| g == ParamGroup::Gate && v != 0.0));

        cfg.phase = Phase::PredictorsOnly;
        let (_, grads) = backward(&params, &inst, &cfg).unwrap();
        for (group, v) in grads.blocks[0].entries() {
            if group == ParamGroup::Gate {
                assert_eq!(v, 0.0);
            }
        }
        assert!(grads.blocks[0]
            .entries()
            .any(|(g, v)| g == ParamGroup::Predictor && v != 0.0));
    }
}
