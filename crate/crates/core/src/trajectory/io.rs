//! Trajectory dataset I/O.
//!
//! A dataset is a trajectory CSV (one row per vehicle per frame, schema
//! `vehicle_id,frame,t,x,y,v_x,v_y,a_y,lane_id,length,width`) plus a
//! keyed-text sidecar (`<stem>.meta.toml`) recording each episode's merge
//! events, style, and which vehicle ids play the lead/follow roles.
//! Neighbor context is recomputed on load from the neighbor rows, so a
//! save/load round trip reproduces every field bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{attach_neighbors, MergingEpisode, StyleLabel, VehicleState};

/// One episode together with the raw neighbor trajectories it was
/// derived from (the merging vehicle's own states live in `episode`).
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: MergingEpisode,
    pub lead: Option<Vec<VehicleState>>,
    pub follow: Option<Vec<VehicleState>>,
}

const HEADER: [&str; 11] = [
    "vehicle_id", "frame", "t", "x", "y", "v_x", "v_y", "a_y", "lane_id", "length", "width",
];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    vehicle_id: u64,
    frame: u64,
    t: f64,
    x: f64,
    y: f64,
    v_x: f64,
    v_y: f64,
    a_y: f64,
    lane_id: u32,
    length: f64,
    width: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarEpisode {
    vehicle_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lead_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    follow_id: Option<u64>,
    t_s: f64,
    t_lc: f64,
    t_e: f64,
    d_a: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    style: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Sidecar {
    #[serde(default)]
    episodes: Vec<SidecarEpisode>,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path.file_stem().unwrap_or_default().to_string_lossy();
    csv_path.with_file_name(format!("{stem}.meta.toml"))
}

/// Writes the dataset to `csv_path` and its sidecar next to it.
pub fn save_trajectories(records: &[EpisodeRecord], csv_path: &Path) -> Result<()> {
    if let Some(parent) = csv_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut writer = csv::Writer::from_path(csv_path).map_err(csv_io_error)?;
    let mut sidecar = Sidecar::default();
    for record in records {
        let ep = &record.episode;
        write_vehicle(&mut writer, ep.vehicle_id, &ep.states)?;
        let lead_id = record.lead.as_ref().map(|_| ep.vehicle_id + 1);
        let follow_id = record.follow.as_ref().map(|_| ep.vehicle_id + 2);
        if let (Some(states), Some(id)) = (record.lead.as_ref(), lead_id) {
            write_vehicle(&mut writer, id, states)?;
        }
        if let (Some(states), Some(id)) = (record.follow.as_ref(), follow_id) {
            write_vehicle(&mut writer, id, states)?;
        }
        sidecar.episodes.push(SidecarEpisode {
            vehicle_id: ep.vehicle_id,
            lead_id,
            follow_id,
            t_s: ep.t_s,
            t_lc: ep.t_lc,
            t_e: ep.t_e,
            d_a: ep.d_a,
            style: ep.style.map(|s| s.name().to_string()),
        });
    }
    writer.flush()?;
    let text = toml::to_string(&sidecar)
        .map_err(|e| Error::Schema(format!("sidecar serialization failed: {e}")))?;
    fs::write(sidecar_path(csv_path), text)?;
    Ok(())
}

fn write_vehicle<W: std::io::Write>(
    writer: &mut csv::Writer<W>,
    vehicle_id: u64,
    states: &[VehicleState],
) -> Result<()> {
    for (frame, s) in states.iter().enumerate() {
        writer
            .serialize(CsvRow {
                vehicle_id,
                frame: frame as u64,
                t: s.t,
                x: s.x,
                y: s.y,
                v_x: s.v_x,
                v_y: s.v_y,
                a_y: s.a_y,
                lane_id: s.lane_id,
                length: s.length,
                width: s.width,
            })
            .map_err(csv_io_error)?;
    }
    Ok(())
}

/// Loads a dataset written by [`save_trajectories`]. A header-only CSV
/// with no sidecar episodes yields an empty list.
pub fn load_trajectories(csv_path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(csv_io_error)?;

    let headers = reader.headers().map_err(csv_io_error)?.clone();
    let names: Vec<&str> = headers.iter().collect();
    for expected in HEADER {
        if !names.contains(&expected) {
            return Err(Error::Schema(format!("missing column '{expected}' in {csv_path:?}")));
        }
    }

    let mut vehicles: BTreeMap<u64, Vec<VehicleState>> = BTreeMap::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(row_error)?;
        vehicles.entry(row.vehicle_id).or_default().push(VehicleState {
            t: row.t,
            x: row.x,
            y: row.y,
            v_x: row.v_x,
            v_y: row.v_y,
            a_y: row.a_y,
            lane_id: row.lane_id,
            length: row.length,
            width: row.width,
        });
    }

    let sidecar_file = sidecar_path(csv_path);
    let sidecar: Sidecar = if sidecar_file.exists() {
        let text = fs::read_to_string(&sidecar_file)?;
        toml::from_str(&text).map_err(|e| Error::Schema(format!("bad sidecar: {e}")))?
    } else if vehicles.is_empty() {
        Sidecar::default()
    } else {
        return Err(Error::Schema(format!("missing episode sidecar {sidecar_file:?}")));
    };

    let mut records = Vec::with_capacity(sidecar.episodes.len());
    for meta in &sidecar.episodes {
        let states = vehicles
            .get(&meta.vehicle_id)
            .ok_or_else(|| Error::Schema(format!("vehicle {} not present in CSV", meta.vehicle_id)))?
            .clone();
        let lead = lookup_neighbor(&vehicles, meta.lead_id)?;
        let follow = lookup_neighbor(&vehicles, meta.follow_id)?;
        let style = match meta.style.as_deref() {
            None => None,
            Some("aggressive") => Some(StyleLabel::Aggressive),
            Some("normal") => Some(StyleLabel::Normal),
            Some(other) => {
                return Err(Error::Schema(format!("unknown style label '{other}' in sidecar")))
            }
        };
        let mut episode = MergingEpisode {
            vehicle_id: meta.vehicle_id,
            neighbors: vec![Default::default(); states.len()],
            states,
            t_s: meta.t_s,
            t_lc: meta.t_lc,
            t_e: meta.t_e,
            d_a: meta.d_a,
            style,
        };
        attach_neighbors(&mut episode, lead.as_deref(), follow.as_deref())?;
        episode.validate()?;
        records.push(EpisodeRecord { episode, lead, follow });
    }
    Ok(records)
}

fn lookup_neighbor(
    vehicles: &BTreeMap<u64, Vec<VehicleState>>,
    id: Option<u64>,
) -> Result<Option<Vec<VehicleState>>> {
    match id {
        None => Ok(None),
        Some(id) => vehicles
            .get(&id)
            .cloned()
            .map(Some)
            .ok_or_else(|| Error::Schema(format!("neighbor vehicle {id} not present in CSV"))),
    }
}

fn csv_io_error(err: csv::Error) -> Error {
    if err.is_io_error() {
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => Error::Schema("csv I/O error".to_string()),
        }
    } else {
        Error::Schema(err.to_string())
    }
}

fn row_error(err: csv::Error) -> Error {
    let line = err
        .position()
        .map(|p| p.line())
        .unwrap_or_default();
    match err.kind() {
        csv::ErrorKind::Deserialize { err: de, .. } => Error::Parse {
            line,
            msg: de.to_string(),
        },
        _ => Error::Parse { line, msg: err.to_string() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::NeighborContext;
    use crate::DT;
    use std::io::Write;

    fn make_record(vehicle_id: u64) -> EpisodeRecord {
        let n = 120;
        let states: Vec<VehicleState> = (0..n)
            .map(|k| {
                let t = k as f64 * DT;
                VehicleState {
                    t,
                    x: 5.25 - 0.01 * k as f64,
                    y: 13.0 * t,
                    v_x: -0.3,
                    v_y: 13.0 + 0.001 * k as f64,
                    a_y: 0.03,
                    lane_id: if k < 60 { 0 } else { 1 },
                    length: 4.3,
                    width: 1.9,
                }
            })
            .collect();
        let lead: Vec<VehicleState> = states
            .iter()
            .map(|s| VehicleState {
                y: s.y + 25.0,
                v_y: 13.4,
                lane_id: 1,
                x: 1.75,
                ..*s
            })
            .collect();
        let mut episode = MergingEpisode {
            vehicle_id,
            t_s: states[10].t,
            t_lc: states[60].t,
            t_e: states[100].t,
            d_a: states[10].x - 3.5,
            neighbors: vec![NeighborContext::default(); n],
            states,
            style: Some(StyleLabel::Normal),
        };
        attach_neighbors(&mut episode, Some(&lead), None).unwrap();
        EpisodeRecord { episode, lead: Some(lead), follow: None }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectories.csv");
        let records = vec![make_record(0), make_record(3)];
        save_trajectories(&records, &path).unwrap();
        let loaded = load_trajectories(&path).unwrap();
        assert_eq!(records, loaded);

        // Saving the loaded set again produces identical bytes.
        let path2 = dir.path().join("again.csv");
        save_trajectories(&loaded, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn header_only_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "{}", HEADER.join(",")).unwrap();
        let records = load_trajectories(&path).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn non_numeric_field_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "{}", HEADER.join(",")).unwrap();
        writeln!(f, "0,0,0.0,oops,1.0,0.0,13.0,0.0,0,4.5,1.8").unwrap();
        let err = load_trajectories(&path).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cols.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "vehicle_id,frame,t,x,y").unwrap();
        writeln!(f, "0,0,0.0,1.0,2.0").unwrap();
        let err = load_trajectories(&path).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "got {err}");
    }
}
