//! CSV trajectory files.
//!
//! Three files are written per run: `frame.csv` (frame pose and body
//! rates), `nodes.csv` (global point kinematics) and, for flexible runs,
//! `modal.csv`. Column names follow `<quantity>_<frame>_<axis>`. Numbers
//! use the shortest representation that parses back to the same `f64`.
//! A run that fails mid-way leaves the rows written so far followed by a
//! line starting with `#DIVERGED`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::trajectory::Record;

pub const SCHEMA_VERSION: u32 = 1;
pub const FRAME_FILE: &str = "frame.csv";
pub const NODES_FILE: &str = "nodes.csv";
pub const MODAL_FILE: &str = "modal.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const DIVERGED_MARKER: &str = "#DIVERGED";

const AXES: [&str; 3] = ["x1", "x2", "x3"];

fn vector_columns<'a>(quantity: &'a str, frame: &'a str) -> impl Iterator<Item = String> + 'a {
    AXES.iter().map(move |a| format!("{quantity}_{frame}_{a}"))
}

pub fn frame_columns() -> Vec<String> {
    let mut cols = vec!["time_s".to_string()];
    cols.extend(vector_columns("origin", "global"));
    cols.extend(vector_columns("rotvec", "global"));
    cols.extend(vector_columns("omega", "body"));
    cols.extend(vector_columns("alpha", "body"));
    cols
}

pub fn node_columns(nodes: &[usize]) -> Vec<String> {
    let mut cols = vec!["time_s".to_string()];
    for n in nodes {
        for q in ["pos", "vel", "acc", "accrbm"] {
            cols.extend(vector_columns(&format!("{q}-n{n}"), "global").collect::<Vec<_>>());
        }
    }
    cols
}

pub fn modal_columns(n_modes: usize) -> Vec<String> {
    std::iter::once("time_s".to_string())
        .chain((1..=n_modes).map(|m| format!("q_modal_m{m}")))
        .collect()
}

pub(crate) fn fmt(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    kind: &'a str,
    units: Units,
    files: Vec<FileEntry>,
}

#[derive(Serialize)]
struct Units {
    time: &'static str,
    length: &'static str,
    angle: &'static str,
    angular_velocity: &'static str,
    angular_acceleration: &'static str,
    velocity: &'static str,
    acceleration: &'static str,
    modal_coordinate: &'static str,
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    columns: Vec<String>,
}

struct Sink {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl Sink {
    fn create(path: PathBuf, header: &[String]) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new().from_path(&path)?;
        writer.write_record(header)?;
        Ok(Sink { path, writer })
    }

    fn row(&mut self, values: impl IntoIterator<Item = f64>) -> Result<()> {
        self.writer.write_record(values.into_iter().map(fmt))?;
        Ok(())
    }

    fn finish(mut self, trailer: Option<&str>) -> Result<()> {
        self.writer.flush()?;
        if let Some(t) = trailer {
            let mut f = std::fs::OpenOptions::new().append(true).open(&self.path)?;
            writeln!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Streams records into the CSV files of one run.
pub struct TrajectoryWriter {
    frame: Sink,
    nodes: Sink,
    modal: Option<Sink>,
    n_nodes: usize,
    n_modes: usize,
    rows: usize,
}

impl TrajectoryWriter {
    /// Creates the output directory, CSV headers and manifest. `kind` is
    /// recorded in the manifest (`flexible` or `rigid`).
    pub fn create(dir: &Path, kind: &str, nodes: &[usize], n_modes: usize) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut files = vec![
            FileEntry {
                name: FRAME_FILE.into(),
                columns: frame_columns(),
            },
            FileEntry {
                name: NODES_FILE.into(),
                columns: node_columns(nodes),
            },
        ];
        if n_modes > 0 {
            files.push(FileEntry {
                name: MODAL_FILE.into(),
                columns: modal_columns(n_modes),
            });
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            kind,
            units: Units {
                time: "s",
                length: "mm",
                angle: "rad",
                angular_velocity: "rad/s",
                angular_acceleration: "rad/s^2",
                velocity: "mm/s",
                acceleration: "mm/s^2",
                modal_coordinate: "mm*Mg^0.5",
            },
            files,
        };
        let text = toml::to_string(&manifest).map_err(|e| crate::Error::Schema(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(TrajectoryWriter {
            frame: Sink::create(dir.join(FRAME_FILE), &frame_columns())?,
            nodes: Sink::create(dir.join(NODES_FILE), &node_columns(nodes))?,
            modal: if n_modes > 0 {
                Some(Sink::create(dir.join(MODAL_FILE), &modal_columns(n_modes))?)
            } else {
                None
            },
            n_nodes: nodes.len(),
            n_modes,
            rows: 0,
        })
    }

    pub fn write(&mut self, r: &Record) -> Result<()> {
        debug_assert_eq!(r.points.len(), self.n_nodes);
        let rv = r.frame.rotation_vector();
        self.frame.row(
            std::iter::once(r.time)
                .chain(r.frame.origin.iter().copied())
                .chain(rv.iter().copied())
                .chain(r.omega_body.iter().copied())
                .chain(r.alpha_body.iter().copied()),
        )?;
        self.nodes.row(std::iter::once(r.time).chain(r.points.iter().flat_map(|p| {
            p.position
                .iter()
                .chain(p.velocity.iter())
                .chain(p.acceleration.iter())
                .chain(p.acceleration_rbm.iter())
                .copied()
                .collect::<Vec<_>>()
        })))?;
        if let Some(m) = &mut self.modal {
            debug_assert_eq!(r.modal_coords.len(), self.n_modes);
            m.row(std::iter::once(r.time).chain(r.modal_coords.iter().copied()))?;
        }
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn finish(self) -> Result<()> {
        self.close(None)
    }

    /// Flushes what was written and appends the divergence trailer.
    pub fn abort(self, message: &str) -> Result<()> {
        let line = format!("{DIVERGED_MARKER} {}", message.replace('\n', " "));
        self.close(Some(&line))
    }

    fn close(self, trailer: Option<&str>) -> Result<()> {
        self.frame.finish(trailer)?;
        self.nodes.finish(trailer)?;
        if let Some(m) = self.modal {
            m.finish(trailer)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_names() {
        assert_eq!(frame_columns()[1], "origin_global_x1");
        assert_eq!(frame_columns().len(), 13);
        let n = node_columns(&[7]);
        assert_eq!(n[1], "pos-n7_global_x1");
        assert_eq!(n[12], "accrbm-n7_global_x3");
        assert_eq!(modal_columns(2), vec!["time_s", "q_modal_m1", "q_modal_m2"]);
    }

    #[test]
    fn shortest_round_trip_numbers() {
        for v in [0.1, 1e-300, -2.5e17, 1.0 / 3.0] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt(0.1), "0.1");
        assert_eq!(fmt(2.5e-15), "2.5e-15");
        assert_eq!(fmt(0.0), "0");
    }
}
