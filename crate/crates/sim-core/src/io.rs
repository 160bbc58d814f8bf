//! Text-based persistence: newline-delimited JSON datasets, JSON checkpoints,
//! and CSV metric tables. All float round-trips are bit-exact.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::graph::{validate_instance, Dims, FrameInstance};
use crate::optim::Velocity;
use crate::params::{ModelParams, ParamBlockSet, WeightMode};
use crate::synth::SynthInstance;
use crate::train::TrainConfig;
use crate::Result;

pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

/// First line of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    actions: usize,
    scenes: usize,
}

/// One dataset record: a frame plus optional ground-truth relevance flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(flatten)]
    pub frame: FrameInstance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<Vec<bool>>,
}

impl From<SynthInstance> for DatasetRecord {
    fn from(inst: SynthInstance) -> Self {
        DatasetRecord {
            frame: inst.frame,
            relevance: Some(inst.relevance),
        }
    }
}

/// Writes a header record followed by one JSON record per line.
pub fn save_dataset(path: &Path, dims: &Dims, records: &[DatasetRecord]) -> Result<()> {
    for (idx, record) in records.iter().enumerate() {
        validate_instance(&record.frame, dims).map_err(|e| {
            SimError::InvalidArgument(format!("record {idx} fails validation: {e}"))
        })?;
    }
    let mut out = String::new();
    let header = DatasetHeader {
        format_version: DATASET_VERSION,
        actions: dims.actions,
        scenes: dims.scenes,
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads and validates a dataset file. Every record is checked against the
/// header dims; errors carry 1-based line numbers.
pub fn load_dataset(path: &Path) -> Result<(Dims, Vec<DatasetRecord>)> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header_line = match lines.next() {
        Some(line) => line?,
        None => return Err(SimError::MissingHeader),
    };
    if header_line.trim().is_empty() {
        return Err(SimError::MissingHeader);
    }
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| SimError::Malformed {
            line: 1,
            msg: format!("bad header: {e}"),
        })?;
    if header.format_version != DATASET_VERSION {
        return Err(SimError::UnsupportedVersion {
            found: header.format_version,
            supported: DATASET_VERSION,
        });
    }
    let dims = Dims::new(header.actions, header.scenes)?;
    let mut records = Vec::new();
    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| SimError::Malformed {
                line: line_no,
                msg: e.to_string(),
            })?;
        validate_instance(&record.frame, &dims).map_err(|e| SimError::Malformed {
            line: line_no,
            msg: e.to_string(),
        })?;
        if let Some(rel) = &record.relevance {
            if rel.len() != record.frame.num_persons() {
                return Err(SimError::Malformed {
                    line: line_no,
                    msg: format!(
                        "relevance length {} does not match {} persons",
                        rel.len(),
                        record.frame.num_persons()
                    ),
                });
            }
        }
        records.push(record);
    }
    Ok((dims, records))
}

/// A checkpoint: everything needed to resume or evaluate a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dims: Dims,
    pub steps: usize,
    pub mode: WeightMode,
    pub gated: bool,
    pub blocks: Vec<ParamBlockSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Vec<ParamBlockSet>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(
        params: &ModelParams,
        steps: usize,
        velocity: Option<&Velocity>,
        train_config: Option<&TrainConfig>,
        seed: u64,
    ) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            dims: params.dims,
            steps,
            mode: params.mode,
            gated: params.gated,
            blocks: params.blocks.clone(),
            velocity: velocity.map(|v| v.blocks.clone()),
            train_config: train_config.copied(),
            seed,
        }
    }

    pub fn into_params(self) -> Result<(ModelParams, Option<Velocity>)> {
        let params = ModelParams {
            dims: self.dims,
            mode: self.mode,
            gated: self.gated,
            blocks: self.blocks,
        };
        params.validate()?;
        let velocity = match self.velocity {
            Some(blocks) => {
                if blocks.len() != params.blocks.len() {
                    return Err(SimError::DimMismatch(
                        "velocity block count does not match parameters".into(),
                    ));
                }
                for b in &blocks {
                    b.validate_shapes(&params.dims)?;
                }
                Some(Velocity { blocks })
            }
            None => None,
        };
        Ok((params, velocity))
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    for block in &checkpoint.blocks {
        if block.entries().any(|(_, v)| !v.is_finite()) {
            return Err(SimError::InvalidArgument(
                "refusing to save non-finite parameters".into(),
            ));
        }
    }
    let json = serde_json::to_string_pretty(checkpoint).expect("checkpoint serializes");
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    let checkpoint: Checkpoint =
        serde_json::from_str(&text).map_err(|e| SimError::Malformed {
            line: e.line(),
            msg: e.to_string(),
        })?;
    if checkpoint.format_version != CHECKPOINT_VERSION {
        return Err(SimError::UnsupportedVersion {
            found: checkpoint.format_version,
            supported: CHECKPOINT_VERSION,
        });
    }
    for block in &checkpoint.blocks {
        block.validate_shapes(&checkpoint.dims)?;
    }
    Ok(checkpoint)
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub variant: String,
    pub phase: String,
    pub epoch: usize,
    pub timestep: usize,
    pub scene_accuracy: f64,
    pub person_accuracy: f64,
    pub loss_total: f64,
    pub loss_ce_scene: f64,
    pub loss_ce_person: f64,
    pub loss_gate_l1: f64,
    pub mean_gate_pp: f64,
    pub mean_gate_ps: f64,
}

pub const METRICS_HEADER: &str = "variant,phase,epoch,timestep,scene_accuracy,person_accuracy,\
loss_total,loss_ce_scene,loss_ce_person,loss_gate_l1,mean_gate_pp,mean_gate_ps";

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.variant,
            r.phase,
            r.epoch,
            r.timestep,
            r.scene_accuracy,
            r.person_accuracy,
            r.loss_total,
            r.loss_ce_scene,
            r.loss_ce_person,
            r.loss_gate_l1,
            r.mean_gate_pp,
            r.mean_gate_ps
        )?;
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == METRICS_HEADER => {}
        _ => return Err(SimError::MissingHeader),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(SimError::Malformed {
                line: idx + 1,
                msg: format!("expected 12 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| SimError::Malformed {
                line: idx + 1,
                msg: format!("bad float {s}: {e}"),
            })
        };
        let parse_u = |s: &str| -> Result<usize> {
            s.parse().map_err(|e| SimError::Malformed {
                line: idx + 1,
                msg: format!("bad integer {s}: {e}"),
            })
        };
        rows.push(MetricsRow {
            variant: fields[0].to_string(),
            phase: fields[1].to_string(),
            epoch: parse_u(fields[2])?,
            timestep: parse_u(fields[3])?,
            scene_accuracy: parse_f(fields[4])?,
            person_accuracy: parse_f(fields[5])?,
            loss_total: parse_f(fields[6])?,
            loss_ce_scene: parse_f(fields[7])?,
            loss_ce_person: parse_f(fields[8])?,
            loss_gate_l1: parse_f(fields[9])?,
            mean_gate_pp: parse_f(fields[10])?,
            mean_gate_ps: parse_f(fields[11])?,
        });
    }
    Ok(rows)
}

/// Gate categorization thresholds: below `IRRELEVANT_BELOW` an edge is noise,
/// above `USEFUL_ABOVE` it is a useful connection.
pub const IRRELEVANT_BELOW: f64 = 0.2;
pub const USEFUL_ABOVE: f64 = 0.7;

pub fn gate_category(gate: f64) -> &'static str {
    if gate < IRRELEVANT_BELOW {
        "irrelevant"
    } else if gate > USEFUL_ABOVE {
        "useful"
    } else {
        "ambiguous"
    }
}

/// One exported edge gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateExportRow {
    pub instance: usize,
    pub timestep: usize,
    pub edge: String,
    pub gate: f64,
}

pub fn write_gate_export(path: &Path, rows: &[GateExportRow]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(
        file,
        "# gate thresholds: irrelevant < {IRRELEVANT_BELOW}, useful > {USEFUL_ABOVE}"
    )?;
    writeln!(file, "instance,timestep,edge,gate,category")?;
    for r in rows {
        writeln!(
            file,
            "{},{},{},{},{}",
            r.instance,
            r.timestep,
            r.edge,
            r.gate,
            gate_category(r.gate)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::forward;
    use crate::params::init_params;
    use crate::synth::{generate, SynthConfig};
    use tempfile::tempdir;

    fn sample_records(count: usize) -> (Dims, Vec<DatasetRecord>) {
        let dims = Dims::new(5, 4).unwrap();
        let config = SynthConfig {
            dims,
            persons_min: 2,
            persons_max: 5,
            distractor_rate: 0.25,
            unary_noise: 2.5,
            correlation: 0.85,
            seed: 42,
            count,
        };
        let records = generate(&config)
            .unwrap()
            .into_iter()
            .map(DatasetRecord::from)
            .collect();
        (dims, records)
    }

    #[test]
    fn dataset_roundtrip_is_elementwise_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let (dims, records) = sample_records(100);
        save_dataset(&path, &dims, &records).unwrap();
        let (dims2, loaded) = load_dataset(&path).unwrap();
        assert_eq!(dims, dims2);
        assert_eq!(records, loaded);
    }

    #[test]
    fn record_with_wrong_width_reports_its_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let header = r#"{"format_version":1,"actions":4,"scenes":3}"#;
        let good = r#"{"scene_unary":[0.5,0.25,0.25],"person_unaries":[[0.25,0.25,0.25,0.25]]}"#;
        let bad = r#"{"scene_unary":[0.5,0.25,0.25],"person_unaries":[[0.4,0.3,0.3]]}"#;
        std::fs::write(&path, format!("{header}\n{good}\n{bad}\n")).unwrap();
        match load_dataset(&path) {
            Err(SimError::Malformed { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("expected length 4"), "{msg}");
            }
            other => panic!("expected Malformed, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_missing_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_dataset(&path), Err(SimError::MissingHeader)));
    }

    #[test]
    fn unknown_dataset_version_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(&path, r#"{"format_version":999,"actions":4,"scenes":3}"#).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(SimError::UnsupportedVersion { found: 999, .. })
        ));
    }

    #[test]
    fn checkpoint_roundtrip_preserves_forward_bit_for_bit() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let dims = Dims::new(5, 4).unwrap();
        let params = init_params(&dims, 3, WeightMode::Untied, true, 99).unwrap();
        save_checkpoint(&path, &Checkpoint::new(&params, 3, None, None, 99)).unwrap();
        let (loaded, velocity) = load_checkpoint(&path).unwrap().into_params().unwrap();
        assert_eq!(params, loaded);
        assert!(velocity.is_none());
        let (_, records) = sample_records(3);
        // records were generated with A=5, S=4, matching dims here
        for record in &records {
            let a = forward(&params, &record.frame, 3).unwrap();
            let b = forward(&loaded, &record.frame, 3).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_checkpoint_is_a_parse_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let dims = Dims::new(3, 3).unwrap();
        let params = init_params(&dims, 1, WeightMode::Tied, false, 1).unwrap();
        save_checkpoint(&path, &Checkpoint::new(&params, 1, None, None, 1)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(SimError::Malformed { .. })
        ));
    }

    #[test]
    fn unknown_checkpoint_version_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let dims = Dims::new(3, 3).unwrap();
        let params = init_params(&dims, 1, WeightMode::Tied, false, 1).unwrap();
        let mut ck = Checkpoint::new(&params, 1, None, None, 1);
        ck.format_version = 999;
        let json = serde_json::to_string(&ck).unwrap();
        std::fs::write(&path, json).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(SimError::UnsupportedVersion { found: 999, .. })
        ));
    }

    #[test]
    fn metrics_roundtrip_and_shape() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        // 3 variants x 3 timesteps of eval rows
        let mut rows = Vec::new();
        for variant in ["tied", "untied", "gated-tied"] {
            for t in 1..=3 {
                rows.push(MetricsRow {
                    variant: variant.into(),
                    phase: "joint".into(),
                    epoch: 5,
                    timestep: t,
                    scene_accuracy: 0.1234567890123 + t as f64,
                    person_accuracy: 0.5,
                    loss_total: 1.25e-3,
                    loss_ce_scene: 1.0 / 3.0,
                    loss_ce_person: 2.0 / 7.0,
                    loss_gate_l1: 0.0,
                    mean_gate_pp: 1.0,
                    mean_gate_ps: 1.0,
                });
            }
        }
        write_metrics(&path, &rows).unwrap();
        let loaded = read_metrics(&path).unwrap();
        assert_eq!(loaded.len(), 9);
        assert_eq!(rows, loaded);
    }

    #[test]
    fn gate_categories_follow_the_thresholds() {
        assert_eq!(gate_category(0.1), "irrelevant");
        assert_eq!(gate_category(0.2), "ambiguous");
        assert_eq!(gate_category(0.5), "ambiguous");
        assert_eq!(gate_category(0.7), "ambiguous");
        assert_eq!(gate_category(0.9), "useful");
    }
}
