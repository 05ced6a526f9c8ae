//! Applied nodal loads with piecewise-linear time histories.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame in which a load direction is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadFrame {
    /// Fixed in the global analysis frame; rotated into the current frame.
    #[default]
    Global,
    /// Follower load fixed to the body.
    Body,
}

/// `(time, value)` breakpoints with linear interpolation. Values are held
/// constant outside the breakpoint range.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    points: Vec<(f64, f64)>,
}

impl TimeSeries {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("series", "needs at least one breakpoint"));
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::config("series", "non-finite breakpoint"));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::config("series", "breakpoint times must be strictly increasing"));
        }
        Ok(TimeSeries { points })
    }

    pub fn constant(value: f64) -> Self {
        TimeSeries {
            points: vec![(0.0, value)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let i = pts.partition_point(|p| p.0 <= t);
        let (t0, v0) = pts[i - 1];
        let (t1, v1) = pts[i];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// True when the breakpoints span `[t0, t1]`. A single breakpoint is
    /// a constant and covers everything.
    pub fn covers(&self, t0: f64, t1: f64) -> bool {
        self.points.len() == 1
            || (self.points[0].0 <= t0 && self.points[self.points.len() - 1].0 >= t1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadEntry {
    pub node: usize,
    /// Unit direction.
    pub direction: Vector3<f64>,
    /// Magnitude history (N).
    pub magnitude: TimeSeries,
    pub frame: LoadFrame,
}

impl LoadEntry {
    /// Normalizes `direction`; a zero direction is rejected.
    pub fn new(
        node: usize,
        direction: Vector3<f64>,
        magnitude: TimeSeries,
        frame: LoadFrame,
    ) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::config("loads.direction", "direction must be a nonzero vector"));
        }
        Ok(LoadEntry {
            node,
            direction: direction / n,
            magnitude,
            frame,
        })
    }

    /// Mean force over the sample times, in current-frame components for
    /// orientation `a_total` (global to current frame).
    pub fn force(&self, times: &[f64], a_total: &Matrix3<f64>) -> Vector3<f64> {
        let mag = times.iter().map(|&t| self.magnitude.value_at(t)).sum::<f64>() / times.len() as f64;
        let f = self.direction * mag;
        match self.frame {
            LoadFrame::Global => a_total * f,
            LoadFrame::Body => f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadSpec {
    pub entries: Vec<LoadEntry>,
}

impl LoadSpec {
    pub fn new(entries: Vec<LoadEntry>) -> Self {
        LoadSpec { entries }
    }

    pub fn none() -> Self {
        LoadSpec::default()
    }

    pub fn validate(&self, n_nodes: usize, t0: f64, t_end: f64) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.node >= n_nodes {
                return Err(Error::config(format!("loads[{i}].node"), format!("node {} does not exist", e.node)));
            }
            if !e.magnitude.covers(t0, t_end) {
                return Err(Error::config(
                    format!("loads[{i}].series"),
                    format!("time series does not cover [{t0}, {t_end}]"),
                ));
            }
        }
        Ok(())
    }

    /// Nodal force vector (length `n_dofs`) averaged over `times`, in
    /// current-frame components.
    pub fn nodal_forces(&self, times: &[f64], a_total: &Matrix3<f64>, n_dofs: usize) -> DVector<f64> {
        let mut f = DVector::zeros(n_dofs);
        for e in &self.entries {
            let mut blk = f.rows_mut(3 * e.node, 3);
            blk += e.force(times, a_total);
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_and_hold() {
        let s = TimeSeries::new(vec![(0.0, 0.0), (1.0, 10.0), (2.0, 10.0)]).unwrap();
        assert_eq!(s.value_at(-1.0), 0.0);
        assert_eq!(s.value_at(0.25), 2.5);
        assert_eq!(s.value_at(1.5), 10.0);
        assert_eq!(s.value_at(5.0), 10.0);
        assert!(s.covers(0.0, 2.0));
        assert!(!s.covers(0.0, 2.5));
        assert!(TimeSeries::new(vec![(1.0, 0.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn global_loads_rotate_with_frame() {
        let e = LoadEntry::new(1, Vector3::new(2.0, 0.0, 0.0), TimeSeries::constant(5.0), LoadFrame::Global).unwrap();
        assert_eq!(e.direction, Vector3::x());
        let a = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(e.force(&[0.0], &a), Vector3::new(0.0, -5.0, 0.0));
        let body = LoadEntry { frame: LoadFrame::Body, ..e.clone() };
        assert_eq!(body.force(&[0.0], &a), Vector3::new(5.0, 0.0, 0.0));
        let spec = LoadSpec::new(vec![e]);
        let f = spec.nodal_forces(&[0.0], &Matrix3::identity(), 6);
        assert_eq!(f[3], 5.0);
        assert!(spec.validate(1, 0.0, 1.0).is_err());
    }
}
