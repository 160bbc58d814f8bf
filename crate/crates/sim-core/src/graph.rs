//! Problem dimensions, graph topology, and frame instances.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::Result;

/// Tolerance for "sums to one" checks on input unaries.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Class-count configuration: `actions` individual-action classes and
/// `scenes` scene-activity classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub actions: usize,
    pub scenes: usize,
}

impl Dims {
    pub fn new(actions: usize, scenes: usize) -> Result<Self> {
        if actions < 2 || scenes < 2 {
            return Err(SimError::InvalidArgument(format!(
                "dims require at least 2 classes per level (got actions={actions}, scenes={scenes})"
            )));
        }
        Ok(Dims { actions, scenes })
    }
}

/// An undirected edge of the frame graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edge {
    /// Between persons `(i, j)` with `i < j`.
    PersonPerson(usize, usize),
    /// Between the scene node and person `i`.
    ScenePerson(usize),
}

/// The fixed scene-star plus person-clique topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTopology {
    pub num_persons: usize,
    pub edges: Vec<Edge>,
}

impl GraphTopology {
    pub fn person_person_edges(&self) -> usize {
        self.num_persons * (self.num_persons - 1) / 2
    }

    pub fn scene_person_edges(&self) -> usize {
        self.num_persons
    }
}

/// Builds the fully-connected-persons + star-to-scene topology for `num_persons` people.
pub fn build_topology(num_persons: usize) -> Result<GraphTopology> {
    if num_persons == 0 {
        return Err(SimError::InvalidArgument(
            "topology requires at least one person".into(),
        ));
    }
    let mut edges = Vec::with_capacity(num_persons * (num_persons - 1) / 2 + num_persons);
    for i in 0..num_persons {
        for j in (i + 1)..num_persons {
            edges.push(Edge::PersonPerson(i, j));
        }
    }
    for i in 0..num_persons {
        edges.push(Edge::ScenePerson(i));
    }
    Ok(GraphTopology { num_persons, edges })
}

/// One scene: the scene-level unary distribution, per-person unary
/// distributions, and optional ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameInstance {
    pub scene_unary: Vec<f64>,
    pub person_unaries: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_labels: Option<Vec<usize>>,
}

impl FrameInstance {
    pub fn num_persons(&self) -> usize {
        self.person_unaries.len()
    }
}

fn check_simplex(v: &[f64], expected_len: usize, what: &str) -> Result<()> {
    if v.len() != expected_len {
        return Err(SimError::LengthMismatch {
            what: what.to_string(),
            expected: expected_len,
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(SimError::InvalidArgument(format!(
            "{what} contains a negative or non-finite entry"
        )));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(SimError::NonSimplex {
            what: what.to_string(),
            sum,
        });
    }
    Ok(())
}

/// Checks every `FrameInstance` invariant against `dims`.
pub fn validate_instance(inst: &FrameInstance, dims: &Dims) -> Result<()> {
    if inst.person_unaries.is_empty() {
        return Err(SimError::InvalidArgument(
            "instance has no persons".into(),
        ));
    }
    check_simplex(&inst.scene_unary, dims.scenes, "scene unary")?;
    for (i, u) in inst.person_unaries.iter().enumerate() {
        check_simplex(u, dims.actions, &format!("person {i} unary"))?;
    }
    if let Some(label) = inst.scene_label {
        if label >= dims.scenes {
            return Err(SimError::LabelOutOfRange {
                what: "scene label".into(),
                label,
                limit: dims.scenes,
            });
        }
    }
    if let Some(labels) = &inst.action_labels {
        if labels.len() != inst.num_persons() {
            return Err(SimError::LengthMismatch {
                what: "action labels".into(),
                expected: inst.num_persons(),
                got: labels.len(),
            });
        }
        for (i, &label) in labels.iter().enumerate() {
            if label >= dims.actions {
                return Err(SimError::LabelOutOfRange {
                    what: format!("action label for person {i}"),
                    label,
                    limit: dims.actions,
                });
            }
        }
    }
    Ok(())
}
