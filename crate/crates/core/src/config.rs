//! Simulation configuration documents (TOML).

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factory::FactoryRecipe;
use crate::loads::{LoadEntry, LoadFrame, LoadSpec, TimeSeries};
use crate::model::{ModalBasis, StructuralModel};
use crate::modelfile::{load_model, LoadedModel};
use crate::rigid::{RigidBodyProps, RigidLoad, RigidState};
use crate::rotation::MarkerTriad;
use crate::synthesis::{step_count, MarkerVelocitySource, VelocityTransport};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    /// Model file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Recipe string, `name` or `name:key=value,...`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<String>,
    /// Full recipe table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factory: Option<FactoryRecipe>,
}

impl ModelSource {
    pub fn is_empty(&self) -> bool {
        self.path.is_none() && self.recipe.is_none() && self.factory.is_none()
    }

    /// Loads or builds the model. `base_dir` resolves relative paths.
    pub fn resolve(&self, base_dir: &Path) -> Result<LoadedModel> {
        let given = [self.path.is_some(), self.recipe.is_some(), self.factory.is_some()];
        match given.iter().filter(|g| **g).count() {
            0 => return Err(Error::config("model", "no model path or recipe given")),
            1 => {}
            _ => return Err(Error::config("model", "give only one of `path`, `recipe` or `factory`")),
        }
        if let Some(p) = &self.path {
            let full = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
            return load_model(&full);
        }
        let (recipe, name) = match (&self.recipe, &self.factory) {
            (Some(s), _) => (FactoryRecipe::parse(s)?, s.clone()),
            (_, Some(f)) => (f.clone(), "factory".to_string()),
            _ => unreachable!(),
        };
        Ok(LoadedModel {
            name,
            model: recipe.build()?,
            basis: None,
            modes_recomputed: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// s
    pub dt: f64,
    /// s
    pub t_end: f64,
    #[serde(default = "default_n_flex")]
    pub n_flex_modes: usize,
    /// Uniform modal damping ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping_ratio: Option<f64>,
    /// One ratio per retained mode, rigid modes first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping_ratios: Option<Vec<f64>>,
    #[serde(default)]
    pub marker_velocities: MarkerVelocitySource,
    #[serde(default)]
    pub velocity_transport: VelocityTransport,
}

fn default_n_flex() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerConfig {
    pub reference: usize,
    pub p: usize,
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
    /// Material point; rigid runs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 3]>,
    pub direction: [f64; 3],
    #[serde(default)]
    pub frame: LoadFrame,
    /// Constant magnitude (N).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    /// `[time, magnitude]` breakpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Rigid translation velocity, global (mm/s).
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Rigid angular velocity about the center of mass (rad/s).
    #[serde(default)]
    pub omega: [f64; 3],
    /// `[mode, amplitude]` pairs; modes are numbered from 1 over the
    /// whole basis, rigid modes included.
    #[serde(default)]
    pub mode_amplitudes: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub nodes: Vec<usize>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            nodes: Vec::new(),
            record_every: 1,
        }
    }
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidConfig {
    pub mass: f64,
    pub com: [f64; 3],
    pub inertia_principal: [f64; 3],
    /// Rows are principal axes; identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal_axes: Option<[[f64; 3]; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelSource,
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markers: Option<MarkerConfig>,
    #[serde(default)]
    pub loads: Vec<LoadConfig>,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rigid: Option<RigidConfig>,
    /// Directory against which relative paths resolve.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn finite3(field: &str, v: &[f64; 3]) -> Result<Vector3<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(Vector3::from(*v))
    } else {
        Err(Error::config(field, "components must be finite"))
    }
}

impl SimulationConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let cfg: SimulationConfig = toml::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Schema(e.to_string()))
    }

    /// Checks everything that does not need the model.
    pub fn validate(&self) -> Result<()> {
        step_count(self.solver.dt, self.solver.t_end)?;
        match (&self.solver.damping_ratio, &self.solver.damping_ratios) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "solver.damping_ratio",
                    "give either `damping_ratio` or `damping_ratios`",
                ))
            }
            (Some(z), None) if !(*z >= 0.0) => {
                return Err(Error::config("solver.damping_ratio", "must be >= 0"))
            }
            (None, Some(zs)) if zs.iter().any(|z| !(*z >= 0.0)) => {
                return Err(Error::config("solver.damping_ratios", "ratios must be >= 0"))
            }
            _ => {}
        }
        if self.output.record_every == 0 {
            return Err(Error::config("output.record_every", "must be at least 1"));
        }
        if let Some(m) = &self.markers {
            if m.reference == m.p || m.reference == m.q || m.p == m.q {
                return Err(Error::config("markers", "marker nodes must be distinct"));
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            let field = |f: &str| format!("loads[{i}].{f}");
            if l.node.is_some() == l.point.is_some() {
                return Err(Error::config(field("node"), "give exactly one of `node` or `point`"));
            }
            let d = finite3(&field("direction"), &l.direction)?;
            if d.norm() == 0.0 {
                return Err(Error::config(field("direction"), "must be nonzero"));
            }
            if l.magnitude.is_some() == l.series.is_some() {
                return Err(Error::config(field("series"), "give exactly one of `magnitude` or `series`"));
            }
            let ts = self.time_series(l).map_err(|e| match e {
                Error::Config { message, .. } => Error::config(field("series"), message),
                e => e,
            })?;
            if !ts.covers(0.0, self.solver.t_end) {
                return Err(Error::config(
                    field("series"),
                    format!("does not cover [0, {}]", self.solver.t_end),
                ));
            }
        }
        finite3("initial.velocity", &self.initial.velocity)?;
        finite3("initial.omega", &self.initial.omega)?;
        if self.initial.mode_amplitudes.iter().any(|(m, a)| *m == 0 || !a.is_finite()) {
            return Err(Error::config(
                "initial.mode_amplitudes",
                "modes are numbered from 1 and amplitudes must be finite",
            ));
        }
        if let Some(r) = &self.rigid {
            self.rigid_props_from_table(r)?;
        }
        Ok(())
    }

    fn time_series(&self, l: &LoadConfig) -> Result<TimeSeries> {
        match (&l.magnitude, &l.series) {
            (Some(m), None) => {
                if m.is_finite() {
                    Ok(TimeSeries::constant(*m))
                } else {
                    Err(Error::config("magnitude", "must be finite"))
                }
            }
            (None, Some(s)) => TimeSeries::new(s.clone()),
            _ => Err(Error::config("series", "give exactly one of `magnitude` or `series`")),
        }
    }

    /// Damping ratios for the modal system.
    pub fn damping_ratios(&self) -> Vec<f64> {
        match (&self.solver.damping_ratio, &self.solver.damping_ratios) {
            (_, Some(zs)) => zs.clone(),
            (Some(z), None) => vec![*z],
            (None, None) => vec![0.0],
        }
    }

    pub fn triad(&self, model: &StructuralModel) -> Result<MarkerTriad> {
        let m = self
            .markers
            .as_ref()
            .ok_or_else(|| Error::config("markers", "marker nodes are required for flexible runs"))?;
        let node = |field: &str, i: usize| {
            model
                .node(i)
                .map_err(|_| Error::config(field, format!("node {i} does not exist")))
        };
        let r = node("markers.reference", m.reference)?;
        let p = node("markers.p", m.p)?;
        let q = node("markers.q", m.q)?;
        MarkerTriad::from_coords(m.reference, m.p, m.q, r, p, q).map_err(|e| match e {
            Error::DegenerateBasis { cross_norm } => Error::config(
                "markers",
                format!("marker nodes are collinear (|e1 x e2| = {cross_norm:.3e})"),
            ),
            e => e,
        })
    }

    /// Nodal loads for a flexible run.
    pub fn load_spec(&self, model: &StructuralModel) -> Result<LoadSpec> {
        let mut entries = Vec::with_capacity(self.loads.len());
        for (i, l) in self.loads.iter().enumerate() {
            let node = l.node.ok_or_else(|| {
                Error::config(format!("loads[{i}].point"), "flexible runs need nodal loads")
            })?;
            if node >= model.n_nodes() {
                return Err(Error::config(format!("loads[{i}].node"), format!("node {node} does not exist")));
            }
            entries.push(LoadEntry::new(node, Vector3::from(l.direction), self.time_series(l)?, l.frame)?);
        }
        Ok(LoadSpec::new(entries))
    }

    /// Point loads for a rigid run; nodal loads need the model.
    pub fn rigid_loads(&self, model: Option<&StructuralModel>) -> Result<Vec<RigidLoad>> {
        let mut out = Vec::with_capacity(self.loads.len());
        for (i, l) in self.loads.iter().enumerate() {
            let point = match (l.point, l.node) {
                (Some(p), _) => Vector3::from(p),
                (None, Some(n)) => model
                    .ok_or_else(|| Error::config(format!("loads[{i}].node"), "nodal loads need a model"))?
                    .node(n)
                    .map_err(|_| Error::config(format!("loads[{i}].node"), format!("node {n} does not exist")))?,
                (None, None) => unreachable!("validated"),
            };
            let d = Vector3::from(l.direction);
            out.push(RigidLoad {
                point,
                direction: d / d.norm(),
                magnitude: self.time_series(l)?,
                frame: l.frame,
            });
        }
        Ok(out)
    }

    fn rigid_props_from_table(&self, r: &RigidConfig) -> Result<RigidBodyProps> {
        let axes = match &r.principal_axes {
            Some(rows) => Matrix3::from_row_slice(&rows.concat()),
            None => Matrix3::identity(),
        };
        RigidBodyProps::new(
            r.mass,
            finite3("rigid.inertia_principal", &r.inertia_principal)?,
            finite3("rigid.com", &r.com)?,
            axes,
        )
    }

    /// Rigid properties from `[rigid]`, else from the model's mass
    /// distribution.
    pub fn rigid_props(&self, model: Option<&StructuralModel>) -> Result<RigidBodyProps> {
        match (&self.rigid, model) {
            (Some(r), _) => self.rigid_props_from_table(r),
            (None, Some(m)) => crate::factory::rigid_props(m),
            (None, None) => Err(Error::config("rigid", "no rigid properties and no model to derive them from")),
        }
    }

    pub fn rigid_initial(&self, props: &RigidBodyProps) -> RigidState {
        let mut s = RigidState::at_rest(props);
        s.com_vel = Vector3::from(self.initial.velocity);
        s.omega_body = Vector3::from(self.initial.omega);
        s
    }

    /// Initial displacement and velocity fields.
    pub fn initial_fields(
        &self,
        model: &StructuralModel,
        basis: &ModalBasis,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = model.n_dofs();
        let mut x0 = DVector::zeros(n);
        for &(mode, amp) in &self.initial.mode_amplitudes {
            if mode > basis.n_modes() {
                return Err(Error::config(
                    "initial.mode_amplitudes",
                    format!("mode {mode} is beyond the {} retained modes", basis.n_modes()),
                ));
            }
            x0 += basis.shapes().column(mode - 1) * amp;
        }
        let v = Vector3::from(self.initial.velocity);
        let w = Vector3::from(self.initial.omega);
        let com = model.center_of_mass();
        let mut xd0 = DVector::zeros(n);
        for (i, r) in model.node_coords().iter().enumerate() {
            let vi = v + w.cross(&(r - com));
            xd0.fixed_rows_mut::<3>(3 * i).copy_from(&vi);
        }
        Ok((x0, xd0))
    }

    /// Output nodes, defaulting to the markers.
    pub fn output_nodes(&self, model: Option<&StructuralModel>) -> Result<Vec<usize>> {
        let nodes = if self.output.nodes.is_empty() {
            self.markers
                .as_ref()
                .map(|m| vec![m.reference, m.p, m.q])
                .unwrap_or_default()
        } else {
            self.output.nodes.clone()
        };
        match model {
            Some(m) => {
                for &n in &nodes {
                    if n >= m.n_nodes() {
                        return Err(Error::config("output.nodes", format!("node {n} does not exist")));
                    }
                }
            }
            None if !nodes.is_empty() => {
                return Err(Error::config("output.nodes", "output nodes need a model"));
            }
            None => {}
        }
        Ok(nodes)
    }
}
