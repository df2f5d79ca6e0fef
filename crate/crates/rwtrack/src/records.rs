//! Records of the JSONL and CSV streams.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use rwtrack_core::eval::TrajectoryFrame;
use rwtrack_core::geometry::Vec3;
use rwtrack_core::localization::BeamformerOutput;
use rwtrack_core::simulator::{GroundTruth, TrueSource, TruthFrame};
use rwtrack_core::tracker::SourceEstimate;

use crate::config::Format;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub dir: Vec3,
    pub dist_m: f64,
    pub energy: f64,
}

/// One `localize` update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeRecord {
    pub frame: u64,
    pub t_seconds: f64,
    pub observations: Vec<ObservationRecord>,
}

impl LocalizeRecord {
    pub fn new(out: &BeamformerOutput, t_seconds: f64) -> Self {
        Self {
            frame: out.frame_index,
            t_seconds,
            observations: out
                .observations
                .iter()
                .map(|o| ObservationRecord {
                    dir: o.direction,
                    dist_m: o.distance,
                    energy: o.energy,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: u64,
    pub pos_m: Vec3,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance_m: f64,
    pub existence: f64,
}

/// One `track` update. Angles and distance are seen from the array center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub t_seconds: f64,
    pub sources: Vec<SourceRecord>,
}

impl TrackRecord {
    pub fn new(t_seconds: f64, estimates: &[SourceEstimate], center: Vec3) -> Self {
        Self {
            t_seconds,
            sources: estimates
                .iter()
                .map(|e| {
                    let rel = e.position - center;
                    SourceRecord {
                        id: e.id,
                        pos_m: e.position,
                        azimuth_deg: rel.azimuth_deg(),
                        elevation_deg: rel.elevation_deg(),
                        distance_m: rel.norm(),
                        existence: e.existence,
                    }
                })
                .collect(),
        }
    }

    pub fn to_frame(&self) -> TrajectoryFrame {
        TrajectoryFrame {
            t_seconds: self.t_seconds,
            sources: self
                .sources
                .iter()
                .map(|s| SourceEstimate {
                    id: s.id,
                    position: s.pos_m,
                    timestamp: self.t_seconds,
                    existence: s.existence,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSourceRecord {
    pub id: u64,
    pub pos_m: Vec3,
    pub active: bool,
}

/// Ground truth at one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub t_seconds: f64,
    pub sources: Vec<TruthSourceRecord>,
}

impl TruthRecord {
    pub fn new(f: &TruthFrame) -> Self {
        Self {
            t_seconds: f.t_seconds,
            sources: f
                .sources
                .iter()
                .map(|s| TruthSourceRecord {
                    id: s.id,
                    pos_m: s.position,
                    active: s.active,
                })
                .collect(),
        }
    }

    pub fn to_frame(&self) -> TruthFrame {
        TruthFrame {
            t_seconds: self.t_seconds,
            sources: self
                .sources
                .iter()
                .map(|s| TrueSource {
                    id: s.id,
                    position: s.pos_m,
                    active: s.active,
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct LocalizeRow {
    frame: u64,
    t_seconds: f64,
    rank: usize,
    dir_x: f64,
    dir_y: f64,
    dir_z: f64,
    dist_m: f64,
    energy: f64,
}

#[derive(Serialize)]
struct TrackRow {
    t_seconds: f64,
    id: u64,
    x: f64,
    y: f64,
    z: f64,
    azimuth_deg: f64,
    elevation_deg: f64,
    distance_m: f64,
    existence: f64,
}

/// Opens `path` for writing; `-` is standard output.
pub fn create(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(std::io::stdout().lock()));
    }
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(Box::new(std::io::BufWriter::new(file)))
}

/// Ordered writer for either stream format. CSV has one row per
/// observation or source, so updates without any are not visible there.
pub enum StreamWriter {
    Jsonl(Box<dyn Write>),
    Csv(csv::Writer<Box<dyn Write>>),
}

impl StreamWriter {
    pub fn new(out: Box<dyn Write>, format: Format) -> Self {
        match format {
            Format::Jsonl => StreamWriter::Jsonl(out),
            Format::Csv => StreamWriter::Csv(csv::Writer::from_writer(out)),
        }
    }

    fn jsonl<T: Serialize>(w: &mut dyn Write, record: &T) -> std::io::Result<()> {
        serde_json::to_writer(&mut *w, record)?;
        w.write_all(b"\n")
    }

    pub fn localize(&mut self, r: &LocalizeRecord) -> std::io::Result<()> {
        match self {
            StreamWriter::Jsonl(w) => Self::jsonl(w, r),
            StreamWriter::Csv(w) => {
                for (rank, o) in r.observations.iter().enumerate() {
                    w.serialize(LocalizeRow {
                        frame: r.frame,
                        t_seconds: r.t_seconds,
                        rank,
                        dir_x: o.dir.x,
                        dir_y: o.dir.y,
                        dir_z: o.dir.z,
                        dist_m: o.dist_m,
                        energy: o.energy,
                    })?;
                }
                Ok(())
            }
        }
    }

    pub fn track(&mut self, r: &TrackRecord) -> std::io::Result<()> {
        match self {
            StreamWriter::Jsonl(w) => Self::jsonl(w, r),
            StreamWriter::Csv(w) => {
                for s in &r.sources {
                    w.serialize(TrackRow {
                        t_seconds: r.t_seconds,
                        id: s.id,
                        x: s.pos_m.x,
                        y: s.pos_m.y,
                        z: s.pos_m.z,
                        azimuth_deg: s.azimuth_deg,
                        elevation_deg: s.elevation_deg,
                        distance_m: s.distance_m,
                        existence: s.existence,
                    })?;
                }
                Ok(())
            }
        }
    }

    pub fn finish(self) -> std::io::Result<()> {
        match self {
            StreamWriter::Jsonl(mut w) => w.flush(),
            StreamWriter::Csv(mut w) => w.flush(),
        }
    }
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = create(path)?;
    for r in records {
        StreamWriter::jsonl(&mut out, &r).map_err(|e| CliError::io(path, e))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

/// Reads one JSON value per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryFrame>> {
    Ok(read_jsonl::<TrackRecord>(path)?
        .iter()
        .map(TrackRecord::to_frame)
        .collect())
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    Ok(GroundTruth {
        frames: read_jsonl::<TruthRecord>(path)?
            .iter()
            .map(TruthRecord::to_frame)
            .collect(),
    })
}
