//! The reference experiment configuration: dataset knobs and training
//! hyperparameters used by the CLI defaults and the benchmark suite.

use crate::graph::Dims;
use crate::params::WeightMode;
use crate::synth::{generate, SynthConfig, SynthInstance};
use crate::train::{Phase, TrainConfig};
use crate::Result;

pub const ACTIONS: usize = 5;
pub const SCENES: usize = 5;
pub const PERSONS_MIN: usize = 4;
pub const PERSONS_MAX: usize = 8;
pub const DISTRACTOR_RATE: f64 = 0.3;
pub const CORRELATION: f64 = 0.9;
pub const UNARY_NOISE: f64 = 3.0;
pub const TRAIN_COUNT: usize = 2000;
pub const TEST_COUNT: usize = 500;
pub const SEED: u64 = 7;

pub const STEPS: usize = 3;
pub const LAMBDA: f64 = 0.01;
pub const LEARNING_RATE: f64 = 0.05;
pub const MOMENTUM: f64 = 0.9;
pub const EPOCHS: usize = 15;
pub const BATCH_SIZE: usize = 32;

pub fn dims() -> Dims {
    Dims {
        actions: ACTIONS,
        scenes: SCENES,
    }
}

/// Generator configuration producing `total` reference-style frames.
pub fn synth_config(total: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        dims: dims(),
        persons_min: PERSONS_MIN,
        persons_max: PERSONS_MAX,
        distractor_rate: DISTRACTOR_RATE,
        unary_noise: UNARY_NOISE,
        correlation: CORRELATION,
        seed,
        count: total,
    }
}

/// The fixed-seed reference split: 2000 training and 500 test frames drawn
/// from one generation run.
pub fn dataset() -> Result<(Vec<SynthInstance>, Vec<SynthInstance>)> {
    let mut all = generate(&synth_config(TRAIN_COUNT + TEST_COUNT, SEED))?;
    let test = all.split_off(TRAIN_COUNT);
    Ok((all, test))
}

/// Reference training hyperparameters for the given mode/gating variant.
pub fn train_config(mode: WeightMode, gated: bool) -> TrainConfig {
    TrainConfig {
        steps: STEPS,
        mode,
        gated,
        lambda: LAMBDA,
        learning_rate: LEARNING_RATE,
        momentum: MOMENTUM,
        epochs: EPOCHS,
        batch_size: BATCH_SIZE,
        seed: SEED,
        phase: Phase::Joint,
    }
}
