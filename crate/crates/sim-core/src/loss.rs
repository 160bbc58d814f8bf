//! Per-trace training loss: per-step cross-entropy on the scene and person
//! predictions plus an L1 penalty on the edge gates.

use crate::error::SimError;
use crate::inference::InferenceTrace;
use crate::Result;

/// Loss components for one instance. `total` is always the exact sum of the
/// three parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce_scene: f64,
    pub ce_person: f64,
    pub gate_l1: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown) {
        self.ce_scene += other.ce_scene;
        self.ce_person += other.ce_person;
        self.gate_l1 += other.gate_l1;
        self.total += other.total;
    }

    pub fn scaled(&self, factor: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.total * factor,
            ce_scene: self.ce_scene * factor,
            ce_person: self.ce_person * factor,
            gate_l1: self.gate_l1 * factor,
        }
    }
}

/// Cross-entropy summed over timesteps (scene and person-averaged terms kept
/// separate) plus `lambda` times the sum of all edge-gate values across
/// timesteps. Gates live in (0,1), so the absolute value in the L1 term is
/// the gate itself.
pub fn loss(trace: &InferenceTrace, lambda: f64) -> Result<LossBreakdown> {
    let scene_label = trace
        .instance
        .scene_label
        .ok_or(SimError::MissingLabels("scene"))?;
    let action_labels = trace
        .instance
        .action_labels
        .as_ref()
        .ok_or(SimError::MissingLabels("action"))?;
    let m = trace.instance.num_persons();

    let mut ce_scene = 0.0;
    let mut ce_person = 0.0;
    let mut gate_sum = 0.0;
    for (state, preds) in trace.states.iter().zip(&trace.preds) {
        ce_scene += -preds.scene[scene_label].ln();
        let mut person_term = 0.0;
        for (i, &label) in action_labels.iter().enumerate() {
            person_term += -preds.persons[i][label].ln();
        }
        ce_person += person_term / m as f64;
        if lambda != 0.0 {
            for i in 0..m {
                for j in (i + 1)..m {
                    gate_sum += state.gate_pp[i][j];
                }
                gate_sum += state.gate_ps[i];
            }
        }
    }
    let gate_l1 = lambda * gate_sum;
    Ok(LossBreakdown {
        total: ce_scene + ce_person + gate_l1,
        ce_scene,
        ce_person,
        gate_l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FrameInstance;
    use crate::inference::{init_messages, MessageState, Predictions};

    fn trace_with_preds(
        scene: Vec<f64>,
        persons: Vec<Vec<f64>>,
        steps: usize,
        scene_label: usize,
        action_labels: Vec<usize>,
    ) -> InferenceTrace {
        let m = persons.len();
        let a = persons[0].len();
        let s = scene.len();
        let inst = FrameInstance {
            scene_unary: vec![1.0 / s as f64; s],
            person_unaries: vec![vec![1.0 / a as f64; a]; m],
            scene_label: Some(scene_label),
            action_labels: Some(action_labels),
        };
        let (initial, initial_preds) = init_messages(&inst);
        let state_template: MessageState = initial.clone();
        InferenceTrace {
            instance: inst,
            steps,
            initial,
            initial_preds,
            states: vec![state_template; steps],
            preds: vec![
                Predictions {
                    scene: scene.clone(),
                    persons: persons.clone(),
                };
                steps
            ],
        }
    }

    #[test]
    fn perfect_predictions_have_zero_cross_entropy() {
        let trace = trace_with_preds(
            vec![0.0, 1.0],
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            3,
            1,
            vec![0, 0],
        );
        let l = loss(&trace, 0.0).unwrap();
        assert_eq!(l.ce_scene, 0.0);
        assert_eq!(l.ce_person, 0.0);
        assert_eq!(l.gate_l1, 0.0);
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn uniform_predictions_give_log_class_count_per_step() {
        // A = S = 4, T = 2, M = 1: each cross-entropy term is 2 ln 4
        let trace = trace_with_preds(vec![0.25; 4], vec![vec![0.25; 4]], 2, 0, vec![3]);
        let l = loss(&trace, 0.0).unwrap();
        let expect = 2.0 * 4.0f64.ln();
        assert!((l.ce_scene - expect).abs() < 1e-12);
        assert!((l.ce_person - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_zeroes_the_gate_term() {
        let mut trace = trace_with_preds(vec![0.5, 0.5], vec![vec![0.5, 0.5]; 2], 2, 0, vec![0, 1]);
        for state in &mut trace.states {
            state.gate_pp[0][1] = 0.9;
            state.gate_pp[1][0] = 0.9;
            state.gate_ps = vec![0.7, 0.6];
        }
        assert_eq!(loss(&trace, 0.0).unwrap().gate_l1, 0.0);
        // with lambda the same gates count once per undirected edge per step
        let l = loss(&trace, 2.0).unwrap();
        assert!((l.gate_l1 - 2.0 * 2.0 * (0.9 + 0.7 + 0.6)).abs() < 1e-12);
    }

    #[test]
    fn total_is_the_exact_sum_of_components() {
        let mut trace = trace_with_preds(
            vec![0.3, 0.7],
            vec![vec![0.25, 0.75], vec![0.6, 0.4]],
            2,
            1,
            vec![1, 0],
        );
        for state in &mut trace.states {
            state.gate_ps = vec![0.31, 0.77];
        }
        let l = loss(&trace, 0.05).unwrap();
        assert!((l.total - (l.ce_scene + l.ce_person + l.gate_l1)).abs() < 1e-12);
        assert!(l.ce_scene >= 0.0 && l.ce_person >= 0.0 && l.gate_l1 >= 0.0);
    }

    #[test]
    fn missing_labels_are_reported() {
        let mut trace = trace_with_preds(vec![0.5, 0.5], vec![vec![0.5, 0.5]], 1, 0, vec![0]);
        trace.instance.scene_label = None;
        assert!(matches!(
            loss(&trace, 0.0),
            Err(SimError::MissingLabels("scene"))
        ));
    }
}
