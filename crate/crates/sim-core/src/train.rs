//! Mini-batch training with the two-phase schedule, plus evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::{backward, Gradients};
use crate::error::SimError;
use crate::graph::{validate_instance, Dims, FrameInstance};
use crate::inference::forward;
use crate::linalg::argmax;
use crate::loss::LossBreakdown;
use crate::optim::{sgd_step, Velocity};
use crate::params::{init_params, ModelParams, WeightMode};
use crate::Result;

/// Which parameter groups a training run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Everything trains together.
    Joint,
    /// Message/prediction weights train, gates stay fixed (and the forward
    /// pass runs ungated).
    PredictorsOnly,
    /// Gate weights train on top of frozen message/prediction weights.
    GatesOnly,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Joint => write!(f, "joint"),
            Phase::PredictorsOnly => write!(f, "predictors-only"),
            Phase::GatesOnly => write!(f, "gates-only"),
        }
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub mode: WeightMode,
    pub gated: bool,
    pub lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub phase: Phase,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(SimError::InvalidArgument("steps must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(SimError::InvalidArgument("lambda must be >= 0".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(SimError::InvalidArgument(
                "learning rate must be >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SimError::InvalidArgument(
                "momentum must be in [0, 1)".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(SimError::InvalidArgument(
                "batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Accuracy and mean gate values at one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub scene_accuracy: f64,
    pub person_accuracy: f64,
    pub mean_gate_pp: f64,
    pub mean_gate_ps: f64,
}

/// Per-timestep metrics over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub per_step: Vec<StepMetrics>,
}

/// One epoch's mean per-instance loss and dataset metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub phase: Phase,
    pub epoch: usize,
    pub train_loss: LossBreakdown,
    pub eval: EvalMetrics,
}

/// Trained parameters plus the optimizer state and per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub velocity: Velocity,
    pub metrics: Vec<EpochMetrics>,
}

fn dataset_dims(dataset: &[FrameInstance]) -> Result<Dims> {
    let first = dataset.first().ok_or(SimError::EmptyDataset)?;
    let dims = Dims::new(
        first
            .person_unaries
            .first()
            .map(|u| u.len())
            .unwrap_or_default(),
        first.scene_unary.len(),
    )?;
    for (idx, inst) in dataset.iter().enumerate() {
        validate_instance(inst, &dims).map_err(|e| {
            SimError::DimMismatch(format!("instance {idx}: {e}"))
        })?;
    }
    Ok(dims)
}

fn require_labels(dataset: &[FrameInstance]) -> Result<()> {
    for (idx, inst) in dataset.iter().enumerate() {
        if inst.scene_label.is_none() {
            return Err(SimError::DimMismatch(format!(
                "instance {idx} is missing a scene label"
            )));
        }
        if inst.action_labels.is_none() {
            return Err(SimError::DimMismatch(format!(
                "instance {idx} is missing action labels"
            )));
        }
    }
    Ok(())
}

/// Sum of per-instance gradients and losses over one batch, reduced in batch
/// order so results do not depend on the worker count.
fn batch_backward(
    params: &ModelParams,
    batch: &[&FrameInstance],
    config: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let per_instance: Vec<(LossBreakdown, Gradients)> = batch
        .par_iter()
        .map(|inst| backward(params, inst, config))
        .collect::<Result<_>>()?;
    let mut total_loss = LossBreakdown::default();
    let mut total_grads = Gradients::zeros_like(params);
    for (l, g) in &per_instance {
        total_loss.add(l);
        total_grads.add(g);
    }
    Ok((total_loss, total_grads))
}

/// Runs `config.epochs` of mini-batch SGD on `params`, starting from zero
/// velocity. The forward pass is gated or not according to `params.gated`;
/// the phase in `config` controls which parameter groups move. Per-epoch
/// accuracies are measured on `eval_set` when given, otherwise on the
/// training set.
pub fn train_from(
    mut params: ModelParams,
    dataset: &[FrameInstance],
    config: &TrainConfig,
    eval_set: Option<&[FrameInstance]>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = dataset_dims(dataset)?;
    require_labels(dataset)?;
    if dims != params.dims {
        return Err(SimError::DimMismatch(format!(
            "dataset dims {dims:?} do not match model dims {:?}",
            params.dims
        )));
    }
    params.validate()?;

    let mut velocity = Velocity::zeros_like(&params);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = LossBreakdown::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&FrameInstance> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (batch_loss, grads) = batch_backward(&params, &batch, config)?;
            loss_sum.add(&batch_loss);
            sgd_step(
                &mut params,
                &grads,
                &mut velocity,
                config.learning_rate,
                config.momentum,
            )?;
        }
        let eval = evaluate(&params, eval_set.unwrap_or(dataset), config.steps)?;
        metrics.push(EpochMetrics {
            phase: config.phase,
            epoch,
            train_loss: loss_sum.scaled(1.0 / dataset.len() as f64),
            eval,
        });
    }

    Ok(TrainOutcome {
        params,
        velocity,
        metrics,
    })
}

/// Initializes parameters from the config seed and trains one phase. A
/// predictors-only phase runs (and returns) the model ungated; gate weights
/// keep their initialization.
pub fn train(dataset: &[FrameInstance], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = dataset_dims(dataset)?;
    let gated = config.gated && config.phase != Phase::PredictorsOnly;
    let params = init_params(&dims, config.steps, config.mode, gated, config.seed)?;
    train_from(params, dataset, config, None)
}

/// The canonical two-phase recipe: first train message/prediction weights
/// with gating off, then freeze them and train the gate weights on the gated
/// model. Each phase runs `config.epochs` epochs.
pub fn train_two_phase(dataset: &[FrameInstance], config: &TrainConfig) -> Result<TrainOutcome> {
    train_two_phase_with_eval(dataset, config, None)
}

/// [`train_two_phase`] with a held-out set for the per-epoch metrics.
pub fn train_two_phase_with_eval(
    dataset: &[FrameInstance],
    config: &TrainConfig,
    eval_set: Option<&[FrameInstance]>,
) -> Result<TrainOutcome> {
    let phase1_cfg = TrainConfig {
        phase: Phase::PredictorsOnly,
        ..*config
    };
    let dims = dataset_dims(dataset)?;
    let mut params = init_params(&dims, config.steps, config.mode, false, config.seed)?;
    params.gated = false;
    let phase1 = train_from(params, dataset, &phase1_cfg, eval_set)?;

    let mut params = phase1.params;
    params.gated = true;
    let phase2_cfg = TrainConfig {
        phase: Phase::GatesOnly,
        ..*config
    };
    let phase2 = train_from(params, dataset, &phase2_cfg, eval_set)?;

    let mut metrics = phase1.metrics;
    metrics.extend(phase2.metrics);
    Ok(TrainOutcome {
        params: phase2.params,
        velocity: phase2.velocity,
        metrics,
    })
}

/// Per-timestep scene and person accuracy plus mean gate values per edge
/// type. Pure function of its inputs.
pub fn evaluate(
    params: &ModelParams,
    dataset: &[FrameInstance],
    steps: usize,
) -> Result<EvalMetrics> {
    if dataset.is_empty() {
        return Err(SimError::EmptyDataset);
    }
    require_labels(dataset)?;
    let traces: Vec<_> = dataset
        .par_iter()
        .map(|inst| forward(params, inst, steps))
        .collect::<Result<_>>()?;

    let mut per_step = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut scene_hits = 0usize;
        let mut person_hits = 0usize;
        let mut persons_total = 0usize;
        let mut gate_pp_sum = 0.0;
        let mut gate_pp_count = 0usize;
        let mut gate_ps_sum = 0.0;
        let mut gate_ps_count = 0usize;
        for (inst, trace) in dataset.iter().zip(&traces) {
            let m = inst.num_persons();
            let preds = &trace.preds[t];
            if argmax(&preds.scene) == inst.scene_label.unwrap() {
                scene_hits += 1;
            }
            let labels = inst.action_labels.as_ref().unwrap();
            for i in 0..m {
                if argmax(&preds.persons[i]) == labels[i] {
                    person_hits += 1;
                }
                persons_total += 1;
            }
            let state = &trace.states[t];
            for i in 0..m {
                for j in (i + 1)..m {
                    gate_pp_sum += state.gate_pp[i][j];
                    gate_pp_count += 1;
                }
                gate_ps_sum += state.gate_ps[i];
                gate_ps_count += 1;
            }
        }
        per_step.push(StepMetrics {
            scene_accuracy: scene_hits as f64 / dataset.len() as f64,
            person_accuracy: person_hits as f64 / persons_total as f64,
            mean_gate_pp: if gate_pp_count == 0 {
                1.0
            } else {
                gate_pp_sum / gate_pp_count as f64
            },
            mean_gate_ps: gate_ps_sum / gate_ps_count as f64,
        });
    }
    Ok(EvalMetrics { per_step })
}

/// Fraction of persons whose unary argmax already matches their label.
pub fn unary_person_accuracy(dataset: &[FrameInstance]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for inst in dataset {
        let labels = inst.action_labels.as_ref().expect("labeled dataset");
        for (u, &label) in inst.person_unaries.iter().zip(labels) {
            if argmax(u) == label {
                hits += 1;
            }
            total += 1;
        }
    }
    hits as f64 / total as f64
}

/// Mean person-person edge gate split by ground-truth relevance: edges
/// touching at least one distractor versus edges between two relevant
/// persons. Averaged over all timesteps of the forward pass.
pub fn gate_means_by_relevance(
    params: &ModelParams,
    dataset: &[(FrameInstance, Vec<bool>)],
    steps: usize,
) -> Result<(f64, f64)> {
    let mut distractor_sum = 0.0;
    let mut distractor_count = 0usize;
    let mut relevant_sum = 0.0;
    let mut relevant_count = 0usize;
    for (inst, relevance) in dataset {
        let trace = forward(params, inst, steps)?;
        let m = inst.num_persons();
        for state in &trace.states {
            for i in 0..m {
                for j in (i + 1)..m {
                    let g = state.gate_pp[i][j];
                    if relevance[i] && relevance[j] {
                        relevant_sum += g;
                        relevant_count += 1;
                    } else {
                        distractor_sum += g;
                        distractor_count += 1;
                    }
                }
            }
        }
    }
    Ok((
        if distractor_count == 0 {
            f64::NAN
        } else {
            distractor_sum / distractor_count as f64
        },
        if relevant_count == 0 {
            f64::NAN
        } else {
            relevant_sum / relevant_count as f64
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward::backward;
    use crate::params::ParamGroup;

    fn tiny_dataset(count: usize, m: usize, a: usize, s: usize, seed: u64) -> Vec<FrameInstance> {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let mut simplex = |n: usize| {
                    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
                    let sum: f64 = raw.iter().sum();
                    raw.into_iter().map(|v| v / sum).collect::<Vec<f64>>()
                };
                let scene_unary = simplex(s);
                let person_unaries: Vec<Vec<f64>> = (0..m).map(|_| simplex(a)).collect();
                let scene_label = Some(rng.gen_range(0..s));
                let action_labels = Some((0..m).map(|_| rng.gen_range(0..a)).collect());
                FrameInstance {
                    scene_unary,
                    person_unaries,
                    scene_label,
                    action_labels,
                }
            })
            .collect()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            steps: 2,
            mode: WeightMode::Tied,
            gated: true,
            lambda: 0.01,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 2,
            batch_size: 4,
            seed: 5,
            phase: Phase::Joint,
        }
    }

    #[test]
    fn zero_learning_rate_freezes_everything() {
        let data = tiny_dataset(6, 3, 4, 3, 1);
        let mut cfg = quick_config();
        cfg.learning_rate = 0.0;
        let init = init_params(&Dims::new(4, 3).unwrap(), 2, cfg.mode, true, cfg.seed).unwrap();
        let out = train(&data, &cfg).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(10, 3, 4, 3, 2);
        let cfg = quick_config();
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn batch_loss_is_the_sum_of_instance_losses() {
        let data = tiny_dataset(5, 3, 4, 3, 3);
        let cfg = quick_config();
        let params = init_params(&Dims::new(4, 3).unwrap(), 2, cfg.mode, true, 11).unwrap();
        let refs: Vec<&FrameInstance> = data.iter().collect();
        let (batch_loss, _) = batch_backward(&params, &refs, &cfg).unwrap();
        let mut expect = 0.0;
        for inst in &data {
            expect += backward(&params, inst, &cfg).unwrap().0.total;
        }
        assert!((batch_loss.total - expect).abs() < 1e-9);
    }

    #[test]
    fn gates_only_phase_leaves_predictor_weights_bit_identical() {
        let data = tiny_dataset(8, 3, 4, 3, 4);
        let mut cfg = quick_config();
        cfg.phase = Phase::GatesOnly;
        let init = init_params(&Dims::new(4, 3).unwrap(), 2, cfg.mode, true, cfg.seed).unwrap();
        let out = train(&data, &cfg).unwrap();
        let before: Vec<(ParamGroup, f64)> = init.blocks[0].entries().collect();
        let after: Vec<(ParamGroup, f64)> = out.params.blocks[0].entries().collect();
        let mut gates_moved = false;
        for ((group, b), (_, a)) in before.iter().zip(&after) {
            match group {
                ParamGroup::Predictor => assert_eq!(b, a),
                ParamGroup::Gate => gates_moved |= a != b,
            }
        }
        assert!(gates_moved);
    }

    #[test]
    fn predictors_only_phase_leaves_gate_weights_bit_identical() {
        let data = tiny_dataset(8, 3, 4, 3, 4);
        let mut cfg = quick_config();
        cfg.phase = Phase::PredictorsOnly;
        let out = train(&data, &cfg).unwrap();
        let init = init_params(&Dims::new(4, 3).unwrap(), 2, cfg.mode, false, cfg.seed).unwrap();
        let before: Vec<(ParamGroup, f64)> = init.blocks[0].entries().collect();
        let after: Vec<(ParamGroup, f64)> = out.params.blocks[0].entries().collect();
        let mut predictors_moved = false;
        for ((group, b), (_, a)) in before.iter().zip(&after) {
            match group {
                ParamGroup::Gate => assert_eq!(b, a),
                ParamGroup::Predictor => predictors_moved |= a != b,
            }
        }
        assert!(predictors_moved);
    }

    #[test]
    fn random_params_score_near_chance_on_balanced_data() {
        let data = tiny_dataset(400, 4, 5, 4, 6);
        let params = init_params(&Dims::new(5, 4).unwrap(), 2, WeightMode::Tied, true, 8).unwrap();
        let metrics = evaluate(&params, &data, 2).unwrap();
        let chance = 1.0 / 4.0;
        for step in &metrics.per_step {
            assert!(
                (step.scene_accuracy - chance).abs() <= 0.1,
                "scene accuracy {} not within 0.1 of {}",
                step.scene_accuracy,
                chance
            );
        }
    }

    #[test]
    fn ungated_evaluation_reports_unit_gates() {
        let data = tiny_dataset(5, 3, 4, 3, 7);
        let params = init_params(&Dims::new(4, 3).unwrap(), 2, WeightMode::Tied, false, 9).unwrap();
        let metrics = evaluate(&params, &data, 2).unwrap();
        for step in &metrics.per_step {
            assert_eq!(step.mean_gate_pp, 1.0);
            assert_eq!(step.mean_gate_ps, 1.0);
        }
    }

    #[test]
    fn evaluate_matches_a_manual_forward_pass() {
        let data = tiny_dataset(1, 2, 3, 3, 8);
        let params = init_params(&Dims::new(3, 3).unwrap(), 1, WeightMode::Tied, true, 10).unwrap();
        let metrics = evaluate(&params, &data, 1).unwrap();
        let trace = forward(&params, &data[0], 1).unwrap();
        let expect_scene =
            (argmax(&trace.preds[0].scene) == data[0].scene_label.unwrap()) as usize as f64;
        assert_eq!(metrics.per_step[0].scene_accuracy, expect_scene);
        let labels = data[0].action_labels.as_ref().unwrap();
        let hits = (0..2)
            .filter(|&i| argmax(&trace.preds[0].persons[i]) == labels[i])
            .count();
        assert_eq!(metrics.per_step[0].person_accuracy, hits as f64 / 2.0);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = quick_config();
        assert!(train(&[], &cfg).is_err());
    }

    #[test]
    fn two_phase_returns_gated_params_with_trained_gates() {
        let data = tiny_dataset(8, 3, 4, 3, 9);
        let mut cfg = quick_config();
        cfg.epochs = 1;
        let out = train_two_phase(&data, &cfg).unwrap();
        assert!(out.params.gated);
        assert_eq!(out.metrics.len(), 2);
        assert_eq!(out.metrics[0].phase, Phase::PredictorsOnly);
        assert_eq!(out.metrics[1].phase, Phase::GatesOnly);
    }
}
