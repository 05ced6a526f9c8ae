//! Recorded time histories shared by the flexible and rigid solvers.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::rotation::{rebase, rotation_exp, rotation_log, LogRotation};

/// Pose of a (reconfigured) reference frame in the global analysis frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameState {
    pub log_rot: LogRotation,
    pub base_rot: Matrix3<f64>,
    /// Frame origin in global coordinates (mm).
    pub origin: Vector3<f64>,
}

impl Default for FrameState {
    fn default() -> Self {
        Self::initial()
    }
}

impl FrameState {
    /// Coincides with the global frame.
    pub fn initial() -> Self {
        FrameState {
            log_rot: LogRotation::zero(),
            base_rot: Matrix3::identity(),
            origin: Vector3::zeros(),
        }
    }

    /// `A = exp(M) · base`, mapping global components to frame components.
    pub fn a_total(&self) -> Matrix3<f64> {
        rotation_exp(&self.log_rot) * self.base_rot
    }

    /// Same pose with the log-rotation folded into the base.
    pub fn rebased(&self) -> Self {
        let (log_rot, base_rot) = rebase(&self.log_rot, &self.base_rot);
        FrameState {
            log_rot,
            base_rot,
            origin: self.origin,
        }
    }

    /// Rotation vector of the total orientation.
    pub fn rotation_vector(&self) -> Vector3<f64> {
        rotation_log(&self.a_total()).vector()
    }

    /// Global position of a point with frame coordinates `local`.
    pub fn to_global_point(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.origin + self.a_total().tr_mul(local)
    }
}

/// Global kinematics of one output node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointKinematics {
    pub node: usize,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// Acceleration of the embedded rigid-body motion only.
    pub acceleration_rbm: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub time: f64,
    pub frame: FrameState,
    pub omega_body: Vector3<f64>,
    pub alpha_body: Vector3<f64>,
    pub modal_coords: Vec<f64>,
    pub points: Vec<PointKinematics>,
    /// Relative mismatch between integrated and re-extracted marker
    /// velocities; zero for the rigid solver.
    pub marker_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub output_nodes: Vec<usize>,
    pub n_modes: usize,
    pub records: Vec<Record>,
}

/// Per-node global time series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeSeries {
    pub node: usize,
    pub time: Vec<f64>,
    pub position: Vec<Vector3<f64>>,
    pub velocity: Vec<Vector3<f64>>,
    pub acceleration: Vec<Vector3<f64>>,
    pub acceleration_rbm: Vec<Vector3<f64>>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    /// Global series of the recorded output nodes in `query`.
    pub fn node_series(&self, query: &[usize]) -> Result<Vec<NodeSeries>> {
        query
            .iter()
            .map(|&node| {
                let k = self
                    .output_nodes
                    .iter()
                    .position(|&n| n == node)
                    .ok_or(Error::UnknownNode(node))?;
                let mut s = NodeSeries {
                    node,
                    ..Default::default()
                };
                for r in &self.records {
                    let p = &r.points[k];
                    s.time.push(r.time);
                    s.position.push(p.position);
                    s.velocity.push(p.velocity);
                    s.acceleration.push(p.acceleration);
                    s.acceleration_rbm.push(p.acceleration_rbm);
                }
                Ok(s)
            })
            .collect()
    }
}
