//! CSV and JSON formats of the pipeline artifacts.

use std::fs;
use std::path::Path;

use lanekit_core::context::FeatureVector;
use lanekit_core::dataset::{LabelRecord, LabeledInstance};
use lanekit_core::events::{ExclusionReason, InitiationQuality, LaneChangeEvent};
use lanekit_core::sim::{SimStep, SweepPoint};
use lanekit_core::trajdata::{RawSample, VehicleTrack};
use lanekit_core::{Direction, Manoeuvre};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Schema;
use crate::error::{CliError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path, producer: &'static str) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::MissingArtifact { path: path.to_path_buf(), producer }),
        Err(e) => Err(CliError::io(path, e)),
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::format("<json>", e))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn from_json<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| CliError::format(path, e))
}

fn csv_bytes<F>(write: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).map_err(|e| CliError::format("<csv>", e))?;
    w.into_inner().map_err(|e| CliError::format("<csv>", e.error()))
}

fn parse_cell<T: std::str::FromStr>(path: &Path, row: usize, column: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| CliError::Parse { path: path.to_path_buf(), row, column: column.to_string(), value: value.to_string() })
}

/// Integer cell; integral floats such as `12.0` are accepted.
fn parse_int(path: &Path, row: usize, column: &str, value: &str) -> Result<i64> {
    if let Ok(v) = value.trim().parse::<i64>() {
        return Ok(v);
    }
    let f: f64 = parse_cell(path, row, column, value)?;
    if f.fract() == 0.0 && f.abs() < 9.0e15 {
        Ok(f as i64)
    } else {
        Err(CliError::Parse { path: path.to_path_buf(), row, column: column.to_string(), value: value.to_string() })
    }
}

/// Raw trajectory rows under a header mapping, converted to metres.
/// Rows are numbered from 1, excluding the header. An empty file yields no
/// rows.
pub fn parse_raw_samples(path: &Path, bytes: &[u8], schema: &Schema) -> Result<Vec<RawSample>> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = rdr.headers().map_err(|e| CliError::format(path, e))?.clone();
    let cols = schema.columns();
    let mut idx = [0usize; 8];
    for (slot, (field, column)) in idx.iter_mut().zip(cols) {
        *slot = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| CliError::Schema { path: path.to_path_buf(), field: field.to_string(), column: column.to_string() })?;
    }
    let scale = schema.unit_scale();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CliError::format(path, format!("row {row}: {e}")))?;
        let cell = |k: usize| rec.get(idx[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64> { parse_cell(path, row, cols[k].1, cell(k)) };
        let lane = parse_int(path, row, cols[5].1, cell(5))?;
        let lane_id = u32::try_from(lane).map_err(|_| CliError::Parse { path: path.to_path_buf(), row, column: cols[5].1.to_string(), value: cell(5).to_string() })?;
        out.push(RawSample {
            vehicle_id: parse_int(path, row, cols[0].1, cell(0))?,
            frame: parse_int(path, row, cols[1].1, cell(1))?,
            x: num(2)? * scale,
            y: num(3)? * scale,
            speed: num(4)? * scale,
            lane_id,
            length: num(6)? * scale,
            width: num(7)? * scale,
        });
    }
    Ok(out)
}

/// Raw rows in the units of `schema`, ready for [`parse_raw_samples`].
pub fn raw_samples_csv(rows: &[RawSample], schema: &Schema) -> Result<Vec<u8>> {
    let s = 1.0 / schema.unit_scale();
    csv_bytes(|w| {
        w.write_record(schema.columns().iter().map(|c| c.1))?;
        for r in rows {
            w.write_record(&[
                r.vehicle_id.to_string(),
                r.frame.to_string(),
                (r.x * s).to_string(),
                (r.y * s).to_string(),
                (r.speed * s).to_string(),
                r.lane_id.to_string(),
                (r.length * s).to_string(),
                (r.width * s).to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Smoothed tracks under the input schema (metric) plus `segment` and
/// `lateral_speed` columns.
pub fn tracks_csv(tracks: &[VehicleTrack], schema: &Schema) -> Result<Vec<u8>> {
    let metric = Schema { feet: false, ..schema.clone() };
    csv_bytes(|w| {
        let mut header: Vec<&str> = metric.columns().iter().map(|c| c.1).collect();
        header.extend(["segment", "lateral_speed"]);
        w.write_record(&header)?;
        for t in tracks {
            for (s, vy) in t.samples.iter().zip(&t.lateral_speed) {
                w.write_record(&[
                    s.vehicle_id.to_string(),
                    s.frame.to_string(),
                    s.x.to_string(),
                    s.y.to_string(),
                    s.speed.to_string(),
                    s.lane_id.to_string(),
                    s.length.to_string(),
                    s.width.to_string(),
                    t.segment.to_string(),
                    vy.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub vehicle_id: i64,
    pub segment: u32,
    pub crossing_frame: i64,
    pub initiation_frame: i64,
    pub direction: Direction,
    pub initiation_quality: InitiationQuality,
    pub headway_fl: f64,
    pub headway_rl: f64,
    pub excluded: bool,
    /// Exclusion reasons joined by `;`.
    pub reasons: String,
}

fn reason_name(r: ExclusionReason) -> String {
    serde_json::to_value(r).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

impl From<&LaneChangeEvent> for EventRow {
    fn from(e: &LaneChangeEvent) -> Self {
        EventRow {
            vehicle_id: e.vehicle_id,
            segment: e.segment,
            crossing_frame: e.crossing_frame,
            initiation_frame: e.initiation_frame,
            direction: e.direction,
            initiation_quality: e.initiation_quality,
            headway_fl: e.headway_fl,
            headway_rl: e.headway_rl,
            excluded: e.is_excluded(),
            reasons: e.excluded.iter().map(|&r| reason_name(r)).collect::<Vec<_>>().join(";"),
        }
    }
}

pub fn serde_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        for r in rows {
            w.serialize(r)?;
        }
        Ok(())
    })
}

pub fn parse_serde_csv<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<Vec<T>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::format(path, format!("row {}: {e}", i + 1))))
        .collect()
}

pub fn labels_csv(labels: &[LabelRecord]) -> Result<Vec<u8>> {
    serde_csv(labels)
}

/// `vehicle_id, frame, label` followed by one column per feature.
pub fn features_csv(instances: &[LabeledInstance], names: &[String]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        let mut header = vec!["vehicle_id", "frame", "label"];
        header.extend(names.iter().map(String::as_str));
        w.write_record(&header)?;
        for inst in instances {
            let mut rec = vec![inst.vehicle_id.to_string(), inst.frame.to_string(), inst.label.to_string()];
            rec.extend(inst.features.values().iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

/// Inverse of [`features_csv`]: the instances and the feature names.
pub fn parse_features_csv(path: &Path, bytes: &[u8]) -> Result<(Vec<LabeledInstance>, Vec<String>)> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let headers = rdr.headers().map_err(|e| CliError::format(path, e))?.clone();
    if headers.len() < 4 || &headers[0] != "vehicle_id" || &headers[1] != "frame" || &headers[2] != "label" {
        return Err(CliError::format(path, "expected header `vehicle_id,frame,label,<features>`"));
    }
    let names: Vec<String> = headers.iter().skip(3).map(String::from).collect();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CliError::format(path, format!("row {row}: {e}")))?;
        let label = Manoeuvre::parse(&rec[2]).ok_or_else(|| CliError::Parse { path: path.to_path_buf(), row, column: "label".into(), value: rec[2].to_string() })?;
        let features = names
            .iter()
            .enumerate()
            .map(|(k, n)| parse_cell(path, row, n, &rec[k + 3]))
            .collect::<Result<Vec<f64>>>()?;
        out.push(LabeledInstance {
            vehicle_id: parse_int(path, row, "vehicle_id", &rec[0])?,
            frame: parse_int(path, row, "frame", &rec[1])?,
            label,
            features: FeatureVector(features),
        });
    }
    Ok((out, names))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub rank: usize,
    pub feature: String,
    pub importance: f64,
}

/// Sensitivity curve with the swept feature named in the header.
pub fn sweep_csv(feature: &str, points: &[SweepPoint]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record([feature, "p_lane_keep", "p_lane_change"])?;
        for p in points {
            w.write_record(&[p.value.to_string(), p.lane_keep.to_string(), p.lane_change.to_string()])?;
        }
        Ok(())
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// One row per simulated step: state, inputs, decision and solver status.
pub fn sim_log_csv(log: &[SimStep]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record([
            "frame", "x", "y", "psi", "v", "steer", "accel", "p_lane_change", "decision", "committed", "target_lane", "y_hat", "v_hat", "status", "objective", "fallback",
            "emergency", "margin", "plan_margin", "ghost_conflict",
        ])?;
        for s in log {
            w.write_record(&[
                s.frame.to_string(),
                s.state.x.to_string(),
                s.state.y.to_string(),
                s.state.psi.to_string(),
                s.state.v.to_string(),
                s.input[0].to_string(),
                s.input[1].to_string(),
                s.probabilities.lane_change.to_string(),
                s.decision.to_string(),
                s.committed.to_string(),
                s.target_lane.to_string(),
                s.target.y_hat.to_string(),
                s.target.v_hat.to_string(),
                s.status.as_str().to_string(),
                opt(s.objective),
                s.fallback.to_string(),
                s.emergency.to_string(),
                s.margin.to_string(),
                opt(s.plan_margin),
                s.ghost_conflict.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Simulated and recorded ego positions per frame.
pub fn overlay_csv(log: &[SimStep], gt: &VehicleTrack) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["frame", "sim_x", "sim_y", "recorded_x", "recorded_y"])?;
        for s in log {
            let (gx, gy) = gt.index_of(s.frame).map_or((String::new(), String::new()), |i| (gt.samples[i].x.to_string(), gt.samples[i].y.to_string()));
            w.write_record(&[s.frame.to_string(), s.state.x.to_string(), s.state.y.to_string(), gx, gy])?;
        }
        Ok(())
    })
}
