//! Learnable parameter blocks and their initialization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::graph::Dims;
use crate::linalg::Mat;
use crate::Result;

/// Whether one block set is shared across timesteps or each step owns its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Tied,
    Untied,
}

impl std::fmt::Display for WeightMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightMode::Tied => write!(f, "tied"),
            WeightMode::Untied => write!(f, "untied"),
        }
    }
}

/// Coarse grouping used by the two-phase schedule: message/prediction weights
/// train in the predictors-only phase, gate weights in the gates-only phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Predictor,
    Gate,
}

/// Every learnable block for one timestep.
///
/// Message blocks: `w_xm_p`/`w_cm_p` map the person unary and previous person
/// prediction inside person-sourced messages, `w_aa` maps the averaged
/// person-to-person neighbor messages, `w_sa` the incoming scene message;
/// `w_xm_s`/`w_cm_s`/`w_as` are the scene-sourced counterparts. Prediction
/// blocks `w_hc1`/`w_hc2` read the concatenated unary-plus-message context for
/// the scene and person nodes.
///
/// Each directional gate owns four matrix blocks, one per context slice
/// (target unary, previous target prediction, the gated message itself, and
/// the averaged competing messages). The blocks classify the context into the
/// message's class space; the gate is the sigmoid of the message's inner
/// product with that classification, a compatibility score that can express
/// agreement between the message and its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlockSet {
    pub w_xm_p: Mat, // A x A
    pub w_cm_p: Mat, // A x A
    pub w_aa: Mat,   // A x A
    pub w_sa: Mat,   // A x S
    pub b_pp: Vec<f64>,
    pub b_ps: Vec<f64>,
    pub w_xm_s: Mat, // S x S
    pub w_cm_s: Mat, // S x S
    pub w_as: Mat,   // S x A
    pub b_sp: Vec<f64>,
    pub w_hc1: Mat, // S x (S + A)
    pub b_hc1: Vec<f64>,
    pub w_hc2: Mat, // A x (2A + S)
    pub b_hc2: Vec<f64>,
    // person -> person gate: message and context slices live in action space
    pub g_pp_x: Mat, // A x A
    pub g_pp_c: Mat, // A x A
    pub g_pp_m: Mat, // A x A
    pub g_pp_n: Mat, // A x A
    pub g_pp_bias: f64,
    // scene -> person gate: message in scene space, context in action space
    pub g_sp_x: Mat, // S x A
    pub g_sp_c: Mat, // S x A
    pub g_sp_m: Mat, // S x S
    pub g_sp_n: Mat, // S x A
    pub g_sp_bias: f64,
    // person -> scene gate: message in action space, scene context
    pub g_ps_x: Mat, // A x S
    pub g_ps_c: Mat, // A x S
    pub g_ps_m: Mat, // A x A
    pub g_ps_n: Mat, // A x A
    pub g_ps_bias: f64,
}

impl ParamBlockSet {
    pub fn zeros(dims: &Dims) -> Self {
        let a = dims.actions;
        let s = dims.scenes;
        ParamBlockSet {
            w_xm_p: Mat::zeros(a, a),
            w_cm_p: Mat::zeros(a, a),
            w_aa: Mat::zeros(a, a),
            w_sa: Mat::zeros(a, s),
            b_pp: vec![0.0; a],
            b_ps: vec![0.0; a],
            w_xm_s: Mat::zeros(s, s),
            w_cm_s: Mat::zeros(s, s),
            w_as: Mat::zeros(s, a),
            b_sp: vec![0.0; s],
            w_hc1: Mat::zeros(s, s + a),
            b_hc1: vec![0.0; s],
            w_hc2: Mat::zeros(a, 2 * a + s),
            b_hc2: vec![0.0; a],
            g_pp_x: Mat::zeros(a, a),
            g_pp_c: Mat::zeros(a, a),
            g_pp_m: Mat::zeros(a, a),
            g_pp_n: Mat::zeros(a, a),
            g_pp_bias: 0.0,
            g_sp_x: Mat::zeros(s, a),
            g_sp_c: Mat::zeros(s, a),
            g_sp_m: Mat::zeros(s, s),
            g_sp_n: Mat::zeros(s, a),
            g_sp_bias: 0.0,
            g_ps_x: Mat::zeros(a, s),
            g_ps_c: Mat::zeros(a, s),
            g_ps_m: Mat::zeros(a, a),
            g_ps_n: Mat::zeros(a, a),
            g_ps_bias: 0.0,
        }
    }

    /// Checks that every block has exactly the shape implied by `dims` and
    /// that every entry is finite.
    pub fn validate_shapes(&self, dims: &Dims) -> Result<()> {
        let a = dims.actions;
        let s = dims.scenes;
        let mats = [
            ("w_xm_p", &self.w_xm_p, (a, a)),
            ("w_cm_p", &self.w_cm_p, (a, a)),
            ("w_aa", &self.w_aa, (a, a)),
            ("w_sa", &self.w_sa, (a, s)),
            ("w_xm_s", &self.w_xm_s, (s, s)),
            ("w_cm_s", &self.w_cm_s, (s, s)),
            ("w_as", &self.w_as, (s, a)),
            ("w_hc1", &self.w_hc1, (s, s + a)),
            ("w_hc2", &self.w_hc2, (a, 2 * a + s)),
            ("g_pp_x", &self.g_pp_x, (a, a)),
            ("g_pp_c", &self.g_pp_c, (a, a)),
            ("g_pp_m", &self.g_pp_m, (a, a)),
            ("g_pp_n", &self.g_pp_n, (a, a)),
            ("g_sp_x", &self.g_sp_x, (s, a)),
            ("g_sp_c", &self.g_sp_c, (s, a)),
            ("g_sp_m", &self.g_sp_m, (s, s)),
            ("g_sp_n", &self.g_sp_n, (s, a)),
            ("g_ps_x", &self.g_ps_x, (a, s)),
            ("g_ps_c", &self.g_ps_c, (a, s)),
            ("g_ps_m", &self.g_ps_m, (a, a)),
            ("g_ps_n", &self.g_ps_n, (a, a)),
        ];
        for (name, m, want) in mats {
            if m.shape() != want {
                return Err(SimError::DimMismatch(format!(
                    "{name}: expected {}x{}, got {}x{}",
                    want.0, want.1, m.rows, m.cols
                )));
            }
            if m.data.len() != m.rows * m.cols {
                return Err(SimError::DimMismatch(format!(
                    "{name}: data length {} does not match {}x{}",
                    m.data.len(),
                    m.rows,
                    m.cols
                )));
            }
        }
        let vecs = [
            ("b_pp", &self.b_pp, a),
            ("b_ps", &self.b_ps, a),
            ("b_sp", &self.b_sp, s),
            ("b_hc1", &self.b_hc1, s),
            ("b_hc2", &self.b_hc2, a),
        ];
        for (name, v, want) in vecs {
            if v.len() != want {
                return Err(SimError::LengthMismatch {
                    what: name.to_string(),
                    expected: want,
                    got: v.len(),
                });
            }
        }
        if self.entries().any(|(_, v)| !v.is_finite()) {
            return Err(SimError::InvalidArgument(
                "parameter block contains a non-finite entry".into(),
            ));
        }
        Ok(())
    }

    /// All entries in a fixed canonical order, tagged with their group.
    pub fn entries(&self) -> impl Iterator<Item = (ParamGroup, f64)> + '_ {
        use ParamGroup::*;
        let pred = self
            .w_xm_p
            .data
            .iter()
            .chain(&self.w_cm_p.data)
            .chain(&self.w_aa.data)
            .chain(&self.w_sa.data)
            .chain(&self.b_pp)
            .chain(&self.b_ps)
            .chain(&self.w_xm_s.data)
            .chain(&self.w_cm_s.data)
            .chain(&self.w_as.data)
            .chain(&self.b_sp)
            .chain(&self.w_hc1.data)
            .chain(&self.b_hc1)
            .chain(&self.w_hc2.data)
            .chain(&self.b_hc2)
            .map(|v| (Predictor, *v));
        let gate = self
            .g_pp_x
            .data
            .iter()
            .chain(&self.g_pp_c.data)
            .chain(&self.g_pp_m.data)
            .chain(&self.g_pp_n.data)
            .chain(std::iter::once(&self.g_pp_bias))
            .chain(&self.g_sp_x.data)
            .chain(&self.g_sp_c.data)
            .chain(&self.g_sp_m.data)
            .chain(&self.g_sp_n.data)
            .chain(std::iter::once(&self.g_sp_bias))
            .chain(&self.g_ps_x.data)
            .chain(&self.g_ps_c.data)
            .chain(&self.g_ps_m.data)
            .chain(&self.g_ps_n.data)
            .chain(std::iter::once(&self.g_ps_bias))
            .map(|v| (Gate, *v));
        pred.chain(gate)
    }

    /// Mutable view of all entries in the same canonical order as [`entries`].
    pub fn entries_mut(&mut self) -> Vec<(ParamGroup, &mut f64)> {
        use ParamGroup::*;
        let mut out = Vec::new();
        macro_rules! push {
            ($group:expr, $it:expr) => {
                for v in $it {
                    out.push(($group, v));
                }
            };
        }
        push!(Predictor, self.w_xm_p.data.iter_mut());
        push!(Predictor, self.w_cm_p.data.iter_mut());
        push!(Predictor, self.w_aa.data.iter_mut());
        push!(Predictor, self.w_sa.data.iter_mut());
        push!(Predictor, self.b_pp.iter_mut());
        push!(Predictor, self.b_ps.iter_mut());
        push!(Predictor, self.w_xm_s.data.iter_mut());
        push!(Predictor, self.w_cm_s.data.iter_mut());
        push!(Predictor, self.w_as.data.iter_mut());
        push!(Predictor, self.b_sp.iter_mut());
        push!(Predictor, self.w_hc1.data.iter_mut());
        push!(Predictor, self.b_hc1.iter_mut());
        push!(Predictor, self.w_hc2.data.iter_mut());
        push!(Predictor, self.b_hc2.iter_mut());
        push!(Gate, self.g_pp_x.data.iter_mut());
        push!(Gate, self.g_pp_c.data.iter_mut());
        push!(Gate, self.g_pp_m.data.iter_mut());
        push!(Gate, self.g_pp_n.data.iter_mut());
        push!(Gate, std::iter::once(&mut self.g_pp_bias));
        push!(Gate, self.g_sp_x.data.iter_mut());
        push!(Gate, self.g_sp_c.data.iter_mut());
        push!(Gate, self.g_sp_m.data.iter_mut());
        push!(Gate, self.g_sp_n.data.iter_mut());
        push!(Gate, std::iter::once(&mut self.g_sp_bias));
        push!(Gate, self.g_ps_x.data.iter_mut());
        push!(Gate, self.g_ps_c.data.iter_mut());
        push!(Gate, self.g_ps_m.data.iter_mut());
        push!(Gate, self.g_ps_n.data.iter_mut());
        push!(Gate, std::iter::once(&mut self.g_ps_bias));
        out
    }

    pub fn num_entries(&self) -> usize {
        self.entries().count()
    }

    /// Zeroes every gate weight matrix and pins all three gate biases, so
    /// every directional gate becomes `sigmoid(bias)` regardless of input.
    pub fn force_gate_bias(&mut self, bias: f64) {
        for m in [
            &mut self.g_pp_x,
            &mut self.g_pp_c,
            &mut self.g_pp_m,
            &mut self.g_pp_n,
            &mut self.g_sp_x,
            &mut self.g_sp_c,
            &mut self.g_sp_m,
            &mut self.g_sp_n,
            &mut self.g_ps_x,
            &mut self.g_ps_c,
            &mut self.g_ps_m,
            &mut self.g_ps_n,
        ] {
            for v in &mut m.data {
                *v = 0.0;
            }
        }
        self.g_pp_bias = bias;
        self.g_sp_bias = bias;
        self.g_ps_bias = bias;
    }
}

/// The full model: dimensions, weight-sharing mode, gating flag, and one
/// block set (tied) or one per timestep (untied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    pub mode: WeightMode,
    pub gated: bool,
    pub blocks: Vec<ParamBlockSet>,
}

impl ModelParams {
    /// Block set to use at 1-based step `t`.
    pub fn block_for_step(&self, t: usize) -> &ParamBlockSet {
        match self.mode {
            WeightMode::Tied => &self.blocks[0],
            WeightMode::Untied => &self.blocks[t - 1],
        }
    }

    /// Index into `blocks` for 1-based step `t`.
    pub fn block_index(&self, t: usize) -> usize {
        match self.mode {
            WeightMode::Tied => 0,
            WeightMode::Untied => t - 1,
        }
    }

    /// Largest step count this parameter set supports (`None` = unbounded).
    pub fn max_steps(&self) -> Option<usize> {
        match self.mode {
            WeightMode::Tied => None,
            WeightMode::Untied => Some(self.blocks.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(SimError::InvalidArgument("no parameter blocks".into()));
        }
        if self.mode == WeightMode::Tied && self.blocks.len() != 1 {
            return Err(SimError::InvalidArgument(format!(
                "tied mode expects exactly one block set, got {}",
                self.blocks.len()
            )));
        }
        for b in &self.blocks {
            b.validate_shapes(&self.dims)?;
        }
        Ok(())
    }
}

fn init_mat(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Mat {
    // Uniform in ±sqrt(6 / (fan_in + fan_out)).
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Mat::zeros(rows, cols);
    for v in &mut m.data {
        *v = rng.gen_range(-bound..bound);
    }
    m
}

/// Identity seeding strengths. Every block that maps one class distribution
/// into class logits starts near a scaled identity (plus the uniform noise),
/// so the untrained network behaves like a calibrated voting machine whose
/// messages, predictions, and gate scores all share the input class
/// alignment. Training is free to move away from it.
mod seed {
    /// Unary evidence paths: trust own observations first.
    pub const UNARY: f64 = 2.0;
    /// Pooled-message decode paths in predictions and cross-level maps.
    pub const DECODE: f64 = 1.0;
    /// Recurrent context paths: mild smoothing to start.
    pub const CONTEXT: f64 = 0.5;
    /// Gate compatibility blocks: score agreement with the running estimate
    /// and with the competing messages.
    pub const GATE_AGREE: f64 = 1.0;
}

fn init_mat_eye(rng: &mut ChaCha20Rng, rows: usize, cols: usize, strength: f64) -> Mat {
    let mut m = init_mat(rng, rows, cols);
    for i in 0..rows.min(cols) {
        m.data[i * cols + i] += strength;
    }
    m
}

/// Identity-seed one column block of a wide prediction matrix.
fn seed_block(m: &mut Mat, col_offset: usize, width: usize, strength: f64) {
    for i in 0..m.rows.min(width) {
        m.data[i * m.cols + col_offset + i] += strength;
    }
}

fn init_block(rng: &mut ChaCha20Rng, dims: &Dims) -> ParamBlockSet {
    let a = dims.actions;
    let s = dims.scenes;
    let mut w_hc1 = init_mat(rng, s, s + a);
    seed_block(&mut w_hc1, 0, s, seed::UNARY);
    seed_block(&mut w_hc1, s, a, seed::DECODE);
    let mut w_hc2 = init_mat(rng, a, 2 * a + s);
    seed_block(&mut w_hc2, 0, a, seed::UNARY);
    seed_block(&mut w_hc2, a, a, seed::DECODE);
    seed_block(&mut w_hc2, 2 * a, s, seed::DECODE);
    ParamBlockSet {
        w_xm_p: init_mat_eye(rng, a, a, seed::UNARY),
        w_cm_p: init_mat_eye(rng, a, a, seed::CONTEXT),
        w_aa: init_mat_eye(rng, a, a, seed::CONTEXT),
        w_sa: init_mat_eye(rng, a, s, seed::CONTEXT),
        b_pp: vec![0.0; a],
        b_ps: vec![0.0; a],
        w_xm_s: init_mat_eye(rng, s, s, seed::UNARY),
        w_cm_s: init_mat_eye(rng, s, s, seed::CONTEXT),
        w_as: init_mat_eye(rng, s, a, seed::DECODE),
        b_sp: vec![0.0; s],
        w_hc1,
        b_hc1: vec![0.0; s],
        w_hc2,
        b_hc2: vec![0.0; a],
        g_pp_x: init_mat(rng, a, a),
        g_pp_c: init_mat_eye(rng, a, a, seed::GATE_AGREE),
        g_pp_m: init_mat(rng, a, a),
        g_pp_n: init_mat_eye(rng, a, a, seed::GATE_AGREE),
        g_pp_bias: 0.0,
        g_sp_x: init_mat_eye(rng, s, a, seed::GATE_AGREE),
        g_sp_c: init_mat_eye(rng, s, a, seed::GATE_AGREE),
        g_sp_m: init_mat(rng, s, s),
        g_sp_n: init_mat_eye(rng, s, a, seed::GATE_AGREE),
        g_sp_bias: 0.0,
        g_ps_x: init_mat_eye(rng, a, s, seed::GATE_AGREE),
        g_ps_c: init_mat_eye(rng, a, s, seed::GATE_AGREE),
        g_ps_m: init_mat(rng, a, a),
        g_ps_n: init_mat_eye(rng, a, a, seed::GATE_AGREE),
        g_ps_bias: 0.0,
    }
}

/// Seed-deterministic initialization: matrix entries uniform in
/// ±sqrt(6/(fan_in+fan_out)), all biases zero. Gate rows are always
/// initialized, whether or not `gated` is set, so a model can be switched
/// between the two forward modes without re-seeding.
pub fn init_params(
    dims: &Dims,
    steps: usize,
    mode: WeightMode,
    gated: bool,
    seed: u64,
) -> Result<ModelParams> {
    if steps == 0 {
        return Err(SimError::InvalidArgument(
            "at least one inference step is required".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let count = match mode {
        WeightMode::Tied => 1,
        WeightMode::Untied => steps,
    };
    let blocks = (0..count).map(|_| init_block(&mut rng, dims)).collect();
    Ok(ModelParams {
        dims: *dims,
        mode,
        gated,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let dims = Dims::new(5, 4).unwrap();
        let a = init_params(&dims, 3, WeightMode::Untied, true, 11).unwrap();
        let b = init_params(&dims, 3, WeightMode::Untied, true, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let dims = Dims::new(5, 4).unwrap();
        let a = init_params(&dims, 1, WeightMode::Tied, false, 1).unwrap();
        let b = init_params(&dims, 1, WeightMode::Tied, false, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn untied_allocates_one_block_per_step() {
        let dims = Dims::new(3, 2).unwrap();
        let p = init_params(&dims, 3, WeightMode::Untied, false, 0).unwrap();
        assert_eq!(p.blocks.len(), 3);
        let p = init_params(&dims, 3, WeightMode::Tied, false, 0).unwrap();
        assert_eq!(p.blocks.len(), 1);
    }

    #[test]
    fn init_shapes_validate_for_assorted_dims() {
        for (a, s) in [(2, 2), (5, 4), (4, 5), (7, 3)] {
            let dims = Dims::new(a, s).unwrap();
            let p = init_params(&dims, 2, WeightMode::Untied, true, 9).unwrap();
            p.validate().unwrap();
        }
    }

    #[test]
    fn biases_start_at_zero_and_weights_respect_bounds() {
        let dims = Dims::new(5, 4).unwrap();
        let p = init_params(&dims, 1, WeightMode::Tied, true, 3).unwrap();
        let b = &p.blocks[0];
        assert!(b.b_pp.iter().all(|v| *v == 0.0));
        assert!(b.b_hc2.iter().all(|v| *v == 0.0));
        assert_eq!(b.g_pp_bias, 0.0);
        let bound = (6.0 / 10.0f64).sqrt();
        assert!(b.w_cm_p.data.iter().all(|v| v.abs() <= bound));
        // the unary map is seeded toward identity
        assert!(b.w_xm_p.at(0, 0) > bound);
        assert!(b.w_xm_p.at(0, 1).abs() <= bound);
    }

    #[test]
    fn entry_traversal_orders_match() {
        let dims = Dims::new(3, 4).unwrap();
        let mut p = init_params(&dims, 1, WeightMode::Tied, true, 5).unwrap();
        let snapshot: Vec<(ParamGroup, f64)> = p.blocks[0].entries().collect();
        let live = p.blocks[0].entries_mut();
        assert_eq!(snapshot.len(), live.len());
        for ((ga, va), (gb, vb)) in snapshot.iter().zip(live.iter()) {
            assert_eq!(ga, gb);
            assert_eq!(*va, **vb);
        }
    }

    #[test]
    fn zero_steps_is_rejected() {
        let dims = Dims::new(3, 3).unwrap();
        assert!(init_params(&dims, 0, WeightMode::Tied, false, 0).is_err());
    }
}
