//! Forward inference: message initialization, per-step message computation,
//! gating, and node predictions over the unrolled graph.

use crate::error::SimError;
use crate::graph::FrameInstance;
use crate::linalg::{axpy, dot, scale, sigmoid, softmax};
use crate::params::{ModelParams, ParamBlockSet};
use crate::Result;

/// All directed messages, gate values, and gated messages at one timestep.
///
/// `m_pp[i][j]` is the raw message from person `i` to person `j` (diagonal
/// unused), `m_ps[i]` from person `i` to the scene, `m_sp[i]` from the scene
/// to person `i`. `gate_pp` is symmetric; `dir_*` hold the directional gate
/// values the edge gates are averaged from.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    pub m_pp: Vec<Vec<Vec<f64>>>,
    pub m_ps: Vec<Vec<f64>>,
    pub m_sp: Vec<Vec<f64>>,
    pub gate_pp: Vec<Vec<f64>>,
    pub gate_ps: Vec<f64>,
    pub dir_pp: Vec<Vec<f64>>,
    pub dir_ps: Vec<f64>,
    pub dir_sp: Vec<f64>,
    pub gated_pp: Vec<Vec<Vec<f64>>>,
    pub gated_ps: Vec<Vec<f64>>,
    pub gated_sp: Vec<Vec<f64>>,
}

/// Scene and per-person class predictions at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub scene: Vec<f64>,
    pub persons: Vec<Vec<f64>>,
}

/// The full unrolled record of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTrace {
    pub instance: FrameInstance,
    pub steps: usize,
    pub initial: MessageState,
    pub initial_preds: Predictions,
    pub states: Vec<MessageState>,
    pub preds: Vec<Predictions>,
}

impl InferenceTrace {
    /// State feeding 1-based step `t` (the gated state of step `t-1`).
    pub fn state_before(&self, t: usize) -> &MessageState {
        if t == 1 {
            &self.initial
        } else {
            &self.states[t - 2]
        }
    }

    /// Predictions feeding 1-based step `t`.
    pub fn preds_before(&self, t: usize) -> &Predictions {
        if t == 1 {
            &self.initial_preds
        } else {
            &self.preds[t - 2]
        }
    }
}

/// Initializes step-0 messages from the unaries: the scene's outgoing
/// messages carry the scene unary, each person's outgoing messages carry that
/// person's unary, all gates are 1, and the initial predictions equal the
/// unaries.
pub fn init_messages(inst: &FrameInstance) -> (MessageState, Predictions) {
    let m = inst.num_persons();
    let m_pp: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    if i == j {
                        Vec::new()
                    } else {
                        inst.person_unaries[i].clone()
                    }
                })
                .collect()
        })
        .collect();
    let m_ps: Vec<Vec<f64>> = inst.person_unaries.clone();
    let m_sp: Vec<Vec<f64>> = (0..m).map(|_| inst.scene_unary.clone()).collect();
    let state = MessageState {
        gated_pp: m_pp.clone(),
        gated_ps: m_ps.clone(),
        gated_sp: m_sp.clone(),
        gate_pp: vec![vec![1.0; m]; m],
        gate_ps: vec![1.0; m],
        dir_pp: vec![vec![1.0; m]; m],
        dir_ps: vec![1.0; m],
        dir_sp: vec![1.0; m],
        m_pp,
        m_ps,
        m_sp,
    };
    let preds = Predictions {
        scene: inst.scene_unary.clone(),
        persons: inst.person_unaries.clone(),
    };
    (state, preds)
}

fn check_person(idx: usize, m: usize) -> Result<()> {
    if idx >= m {
        return Err(SimError::InvalidArgument(format!(
            "person index {idx} out of range [0, {m})"
        )));
    }
    Ok(())
}

/// Average of `items[k]` over all `k` not in `exclude`; the zero vector when
/// the index set is empty. Summation runs in ascending `k` order.
pub(crate) fn masked_average<'a, F>(count: usize, len: usize, exclude: &[usize], get: F) -> Vec<f64>
where
    F: Fn(usize) -> &'a [f64],
{
    let mut total = vec![0.0; len];
    let mut n = 0usize;
    for k in 0..count {
        if exclude.contains(&k) {
            continue;
        }
        axpy(1.0, get(k), &mut total);
        n += 1;
    }
    if n == 0 {
        return total;
    }
    let inv = 1.0 / n as f64;
    for v in &mut total {
        *v *= inv;
    }
    total
}

/// Raw message from person `i` to person `j`: a softmax over the person's
/// unary, its previous prediction, the averaged gated messages from the other
/// persons into `i`, and the gated scene message into `i`.
pub fn person_to_person_message(
    blocks: &ParamBlockSet,
    prev: &MessageState,
    prev_preds: &Predictions,
    inst: &FrameInstance,
    i: usize,
    j: usize,
) -> Result<Vec<f64>> {
    let m = inst.num_persons();
    check_person(i, m)?;
    check_person(j, m)?;
    if i == j {
        return Err(SimError::InvalidArgument(
            "person-to-person message requires distinct endpoints".into(),
        ));
    }
    let a = blocks.w_xm_p.rows;
    let avg = masked_average(m, a, &[i, j], |k| &prev.gated_pp[k][i]);
    let mut z = blocks.w_xm_p.matvec(&inst.person_unaries[i]);
    blocks.w_cm_p.matvec_add(&prev_preds.persons[i], &mut z);
    blocks.w_aa.matvec_add(&avg, &mut z);
    blocks.w_sa.matvec_add(&prev.gated_sp[i], &mut z);
    axpy(1.0, &blocks.b_pp, &mut z);
    Ok(softmax(&z))
}

/// Raw message from person `i` to the scene.
pub fn person_to_scene_message(
    blocks: &ParamBlockSet,
    prev: &MessageState,
    prev_preds: &Predictions,
    inst: &FrameInstance,
    i: usize,
) -> Result<Vec<f64>> {
    let m = inst.num_persons();
    check_person(i, m)?;
    let a = blocks.w_xm_p.rows;
    let avg = masked_average(m, a, &[i], |k| &prev.gated_pp[k][i]);
    let mut z = blocks.w_xm_p.matvec(&inst.person_unaries[i]);
    blocks.w_cm_p.matvec_add(&prev_preds.persons[i], &mut z);
    blocks.w_aa.matvec_add(&avg, &mut z);
    axpy(1.0, &blocks.b_ps, &mut z);
    Ok(softmax(&z))
}

/// Raw message from the scene to person `j`, pooled over the other persons'
/// messages into the scene.
pub fn scene_to_person_message(
    blocks: &ParamBlockSet,
    prev: &MessageState,
    prev_preds: &Predictions,
    inst: &FrameInstance,
    j: usize,
) -> Result<Vec<f64>> {
    let m = inst.num_persons();
    check_person(j, m)?;
    let a = blocks.w_as.cols;
    let avg = masked_average(m, a, &[j], |k| &prev.gated_ps[k]);
    let mut z = blocks.w_xm_s.matvec(&inst.scene_unary);
    blocks.w_cm_s.matvec_add(&prev_preds.scene, &mut z);
    blocks.w_as.matvec_add(&avg, &mut z);
    axpy(1.0, &blocks.b_sp, &mut z);
    Ok(softmax(&z))
}

/// Classification field for the gate on message `i -> j` (person to person):
/// the gate blocks map the target's unary, the target's previous prediction,
/// the message itself, and the averaged competing raw messages into `j` into
/// action space. The gate scores the message against this field.
pub(crate) fn gate_field_pp(
    blocks: &ParamBlockSet,
    raw: &MessageState,
    prev_preds: &Predictions,
    inst: &FrameInstance,
    i: usize,
    j: usize,
) -> Vec<f64> {
    let m = inst.num_persons();
    let a = inst.person_unaries[j].len();
    let avg = masked_average(m, a, &[i, j], |k| &raw.m_pp[k][j]);
    let mut h = blocks.g_pp_x.matvec(&inst.person_unaries[j]);
    blocks.g_pp_c.matvec_add(&prev_preds.persons[j], &mut h);
    blocks.g_pp_m.matvec_add(&raw.m_pp[i][j], &mut h);
    blocks.g_pp_n.matvec_add(&avg, &mut h);
    h
}

/// Classification field for the gate on the scene-to-person message into `i`,
/// built from `[x_i, c_i, m_s->i, avg of raw person messages into i]`.
pub(crate) fn gate_field_sp(
    blocks: &ParamBlockSet,
    raw: &MessageState,
    prev_preds: &Predictions,
    inst: &FrameInstance,
    i: usize,
) -> Vec<f64> {
    let m = inst.num_persons();
    let a = inst.person_unaries[i].len();
    let avg = masked_average(m, a, &[i], |k| &raw.m_pp[k][i]);
    let mut h = blocks.g_sp_x.matvec(&inst.person_unaries[i]);
    blocks.g_sp_c.matvec_add(&prev_preds.persons[i], &mut h);
    blocks.g_sp_m.matvec_add(&raw.m_sp[i], &mut h);
    blocks.g_sp_n.matvec_add(&avg, &mut h);
    h
}

/// Classification field for the gate on the person-to-scene message from `i`,
/// built from `[x_s, c_s, m_i->s, avg of the other persons' raw messages]`.
pub(crate) fn gate_field_ps(
    blocks: &ParamBlockSet,
    raw: &MessageState,
    prev_preds: &Predictions,
    inst: &FrameInstance,
    i: usize,
) -> Vec<f64> {
    let m = inst.num_persons();
    let a = inst.person_unaries[i].len();
    let avg = masked_average(m, a, &[i], |k| &raw.m_ps[k]);
    let mut h = blocks.g_ps_x.matvec(&inst.scene_unary);
    blocks.g_ps_c.matvec_add(&prev_preds.scene, &mut h);
    blocks.g_ps_m.matvec_add(&raw.m_ps[i], &mut h);
    blocks.g_ps_n.matvec_add(&avg, &mut h);
    h
}

/// Which directed message a gate scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    /// Person `i` to person `j`.
    PersonToPerson { i: usize, j: usize },
    /// Scene to person `i`.
    SceneToPerson { i: usize },
    /// Person `i` to scene.
    PersonToScene { i: usize },
}

/// Directional gate value: the sigmoid of the raw message's inner product
/// with its gate classification field, plus a scalar bias. Computed from the
/// raw messages at the current step and the previous step's predictions.
pub fn directional_gate(
    blocks: &ParamBlockSet,
    raw: &MessageState,
    prev_preds: &Predictions,
    inst: &FrameInstance,
    kind: GateKind,
) -> f64 {
    match kind {
        GateKind::PersonToPerson { i, j } => {
            let h = gate_field_pp(blocks, raw, prev_preds, inst, i, j);
            sigmoid(dot(&raw.m_pp[i][j], &h) + blocks.g_pp_bias)
        }
        GateKind::SceneToPerson { i } => {
            let h = gate_field_sp(blocks, raw, prev_preds, inst, i);
            sigmoid(dot(&raw.m_sp[i], &h) + blocks.g_sp_bias)
        }
        GateKind::PersonToScene { i } => {
            let h = gate_field_ps(blocks, raw, prev_preds, inst, i);
            sigmoid(dot(&raw.m_ps[i], &h) + blocks.g_ps_bias)
        }
    }
}

/// Symmetric edge gate: the average of the two directional gates.
pub fn edge_gate(dir_a_to_b: f64, dir_b_to_a: f64) -> f64 {
    (dir_a_to_b + dir_b_to_a) / 2.0
}

/// Scales every raw message by its edge gate; both directions of an edge use
/// the same gate.
pub fn apply_gates(state: &mut MessageState) {
    let m = state.m_ps.len();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            state.gated_pp[i][j] = scale(&state.m_pp[i][j], state.gate_pp[i][j]);
        }
        state.gated_ps[i] = scale(&state.m_ps[i], state.gate_ps[i]);
        state.gated_sp[i] = scale(&state.m_sp[i], state.gate_ps[i]);
    }
}

/// Scene prediction from the scene unary and the average gated
/// person-to-scene message.
pub fn predict_scene(
    blocks: &ParamBlockSet,
    state: &MessageState,
    inst: &FrameInstance,
) -> Vec<f64> {
    let m = inst.num_persons();
    let a = blocks.w_hc1.cols - inst.scene_unary.len();
    let avg = masked_average(m, a, &[], |k| &state.gated_ps[k]);
    let mut ctx = Vec::with_capacity(blocks.w_hc1.cols);
    ctx.extend_from_slice(&inst.scene_unary);
    ctx.extend_from_slice(&avg);
    let mut z = blocks.w_hc1.matvec(&ctx);
    axpy(1.0, &blocks.b_hc1, &mut z);
    softmax(&z)
}

/// Per-person predictions from each person's unary, the averaged gated
/// messages from the other persons, and the gated scene message.
pub fn predict_persons(
    blocks: &ParamBlockSet,
    state: &MessageState,
    inst: &FrameInstance,
) -> Vec<Vec<f64>> {
    let m = inst.num_persons();
    let a = inst.person_unaries[0].len();
    (0..m)
        .map(|i| {
            let avg = masked_average(m, a, &[i], |k| &state.gated_pp[k][i]);
            let mut ctx = Vec::with_capacity(blocks.w_hc2.cols);
            ctx.extend_from_slice(&inst.person_unaries[i]);
            ctx.extend_from_slice(&avg);
            ctx.extend_from_slice(&state.gated_sp[i]);
            let mut z = blocks.w_hc2.matvec(&ctx);
            axpy(1.0, &blocks.b_hc2, &mut z);
            softmax(&z)
        })
        .collect()
}

/// Runs the full unrolled inference: initializes messages from the unaries,
/// then for each step computes all raw messages from the previous gated
/// state, the directional and edge gates, the gated messages, and the node
/// predictions. In ungated mode every edge gate is fixed at 1.
pub fn forward(params: &ModelParams, inst: &FrameInstance, steps: usize) -> Result<InferenceTrace> {
    if steps == 0 {
        return Err(SimError::InvalidArgument(
            "at least one inference step is required".into(),
        ));
    }
    if let Some(max) = params.max_steps() {
        if steps > max {
            return Err(SimError::InvalidArgument(format!(
                "untied parameters support at most {max} steps, requested {steps}"
            )));
        }
    }
    let m = inst.num_persons();
    if inst.scene_unary.len() != params.dims.scenes
        || inst.person_unaries.iter().any(|u| u.len() != params.dims.actions)
    {
        return Err(SimError::DimMismatch(
            "instance does not match model dimensions".into(),
        ));
    }

    let (initial, initial_preds) = init_messages(inst);
    let mut states: Vec<MessageState> = Vec::with_capacity(steps);
    let mut preds: Vec<Predictions> = Vec::with_capacity(steps);

    for t in 1..=steps {
        let blocks = params.block_for_step(t);
        let (prev_state, prev_preds) = if t == 1 {
            (&initial, &initial_preds)
        } else {
            (&states[t - 2], &preds[t - 2])
        };

        // (1) raw messages from the previous gated state and predictions
        let mut m_pp: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); m]; m];
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                m_pp[i][j] = person_to_person_message(blocks, prev_state, prev_preds, inst, i, j)?;
            }
        }
        let m_ps: Vec<Vec<f64>> = (0..m)
            .map(|i| person_to_scene_message(blocks, prev_state, prev_preds, inst, i))
            .collect::<Result<_>>()?;
        let m_sp: Vec<Vec<f64>> = (0..m)
            .map(|j| scene_to_person_message(blocks, prev_state, prev_preds, inst, j))
            .collect::<Result<_>>()?;

        let mut state = MessageState {
            gated_pp: m_pp.clone(),
            gated_ps: m_ps.clone(),
            gated_sp: m_sp.clone(),
            gate_pp: vec![vec![1.0; m]; m],
            gate_ps: vec![1.0; m],
            dir_pp: vec![vec![1.0; m]; m],
            dir_ps: vec![1.0; m],
            dir_sp: vec![1.0; m],
            m_pp,
            m_ps,
            m_sp,
        };

        // (2) directional gates, then symmetric edge gates
        if params.gated {
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        continue;
                    }
                    state.dir_pp[i][j] = directional_gate(
                        blocks,
                        &state,
                        prev_preds,
                        inst,
                        GateKind::PersonToPerson { i, j },
                    );
                }
            }
            for i in 0..m {
                state.dir_ps[i] = directional_gate(
                    blocks,
                    &state,
                    prev_preds,
                    inst,
                    GateKind::PersonToScene { i },
                );
                state.dir_sp[i] = directional_gate(
                    blocks,
                    &state,
                    prev_preds,
                    inst,
                    GateKind::SceneToPerson { i },
                );
            }
            for i in 0..m {
                for j in (i + 1)..m {
                    let g = edge_gate(state.dir_pp[i][j], state.dir_pp[j][i]);
                    state.gate_pp[i][j] = g;
                    state.gate_pp[j][i] = g;
                }
                state.gate_ps[i] = edge_gate(state.dir_ps[i], state.dir_sp[i]);
            }
        }

        // (3) gated messages, (4) predictions
        apply_gates(&mut state);
        let scene = predict_scene(blocks, &state, inst);
        let persons = predict_persons(blocks, &state, inst);

        states.push(state);
        preds.push(Predictions { scene, persons });
    }

    Ok(InferenceTrace {
        instance: inst.clone(),
        steps,
        initial,
        initial_preds,
        states,
        preds,
    })
}
