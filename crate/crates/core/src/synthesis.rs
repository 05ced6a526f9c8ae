//! Flexible-body stepping in a sequence of reconfigured inertial frames.
//!
//! Each step integrates the linear modal equations with RK4 in the frame
//! fixed at the start of the step. The rigid-body part of the modal
//! response is extracted to advance the frame pose, the new state is
//! rotated into the next frame and its rigid displacement is dropped.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loads::LoadSpec;
use crate::model::{modal_state_derivative, ModalBasis, ModalState, ModalSystem, StructuralModel};
use crate::par::{self, Execution};
use crate::rotation::{
    angular_acceleration_h, angular_velocity_g, dexp_inv_rate, relative_velocity_rate, rotation_exp,
    LogRotation, MarkerTriad,
};
use crate::trajectory::{FrameState, NodeSeries, PointKinematics, Record, Trajectory};

/// Node count above which per-node transforms are spread over threads.
const PARALLEL_TRANSFORM_NODES: usize = 4096;

/// Debug builds warn (once per run) when integrated marker velocities
/// drift further than this from the re-extracted ones. Elastic deformation
/// alone produces drift of the order of the strain.
const MARKER_DRIFT_TOL: f64 = 1e-6;

/// State carried between steps, in the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub x: DVector<f64>,
    pub x_dot: DVector<f64>,
    pub eta: ModalState,
    pub v_pr: Vector3<f64>,
    pub v_qr: Vector3<f64>,
    pub time: f64,
}

/// Marker velocities and accelerations of the embedded rigid-body motion,
/// relative to the reference marker.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EmbeddedRbm {
    pub v_pr: Vector3<f64>,
    pub v_qr: Vector3<f64>,
    pub a_pr: Vector3<f64>,
    pub a_qr: Vector3<f64>,
}

/// Where the marker relative velocities at the start of a step come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerVelocitySource {
    /// Re-extracted from the rigid-mode rates of `η`.
    Reextract,
    /// Carried over from the previous step's RK4 increments.
    #[default]
    Integrated,
}

/// How the rigid part of the velocity field moves into the next frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityTransport {
    /// The rigid momentum (linear, and angular about the center of mass)
    /// is rotated into the new frame and re-expanded over the material
    /// coordinates; only the elastic remainder is rotated node by node.
    /// Marker accelerations gain the centripetal and gyroscopic terms the
    /// linear model lacks.
    #[default]
    Material,
    /// Every nodal velocity is rotated as a plain vector and marker
    /// accelerations come from the linear model alone. A spinning body's
    /// rigid velocity then decays like `cos θ`.
    Nodal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub marker_velocities: MarkerVelocitySource,
    pub velocity_transport: VelocityTransport,
    /// Log-rotation angle above which the frame is rebased.
    pub rebase_angle: f64,
    pub execution: Execution,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            marker_velocities: MarkerVelocitySource::default(),
            velocity_transport: VelocityTransport::default(),
            rebase_angle: std::f64::consts::PI,
            execution: Execution::default(),
        }
    }
}

/// Inputs of a flexible run.
#[derive(Debug, Clone)]
pub struct SimParams {
    pub triad: MarkerTriad,
    pub loads: LoadSpec,
    pub dt: f64,
    pub t_end: f64,
    /// Initial displacement; zero when `None`.
    pub x0: Option<DVector<f64>>,
    /// Initial velocity; zero when `None`.
    pub x_dot0: Option<DVector<f64>>,
    pub output_nodes: Vec<usize>,
    /// Record every k-th step; the final step is always recorded.
    pub record_every: usize,
    pub options: SynthesisOptions,
}

impl SimParams {
    pub fn new(triad: MarkerTriad, loads: LoadSpec, dt: f64, t_end: f64) -> Self {
        SimParams {
            triad,
            loads,
            dt,
            t_end,
            x0: None,
            x_dot0: None,
            output_nodes: Vec::new(),
            record_every: 1,
            options: SynthesisOptions::default(),
        }
    }
}

/// Number of steps to reach `t_end` with step `dt`.
pub fn step_count(dt: f64, t_end: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::config("solver.dt", "must be a positive number"));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::config("solver.t_end", "must be a non-negative number"));
    }
    Ok((t_end / dt).round() as usize)
}

/// Rigid-mode expansion at the marker nodes of `η̇ = [q̇; q̈]`.
pub fn extract_embedded_rbm(basis: &ModalBasis, eta_dot: &DVector<f64>, triad: &MarkerTriad) -> Result<EmbeddedRbm> {
    let m = basis.n_modes();
    if eta_dot.len() != 2 * m {
        return Err(Error::Dimension {
            what: "modal state rate",
            expected: 2 * m,
            found: eta_dot.len(),
        });
    }
    let rows = marker_rigid_rows(basis, triad)?;
    Ok(rbm_from_rows(&rows, eta_dot, m, basis.n_rigid()))
}

fn marker_rigid_rows(basis: &ModalBasis, triad: &MarkerTriad) -> Result<[DMatrix<f64>; 3]> {
    let n_nodes = basis.n_dofs() / 3;
    let nr = basis.n_rigid();
    let mut rows = Vec::with_capacity(3);
    for (field, node) in [
        ("markers.reference", triad.ref_node),
        ("markers.p", triad.p_node),
        ("markers.q", triad.q_node),
    ] {
        if node >= n_nodes {
            return Err(Error::config(field, format!("node {node} does not exist")));
        }
        rows.push(basis.shapes().view((3 * node, 0), (3, nr)).into_owned());
    }
    Ok(rows.try_into().expect("three marker rows"))
}

fn rbm_from_rows(rows: &[DMatrix<f64>; 3], eta_dot: &DVector<f64>, m: usize, nr: usize) -> EmbeddedRbm {
    let qd = eta_dot.rows(0, nr);
    let qdd = eta_dot.rows(m, nr);
    let at = |k: usize, v: &nalgebra::DVectorView<f64>| -> Vector3<f64> {
        let r = &rows[k] * v;
        Vector3::new(r[0], r[1], r[2])
    };
    let (vr, vp, vq) = (at(0, &qd), at(1, &qd), at(2, &qd));
    let (ar, ap, aq) = (at(0, &qdd), at(1, &qdd), at(2, &qdd));
    EmbeddedRbm {
        v_pr: vp - vr,
        v_qr: vq - vr,
        a_pr: ap - ar,
        a_qr: aq - ar,
    }
}

/// Applies `r_rel` to every node's displacement and velocity triple.
pub fn transform_state(
    r_rel: &Matrix3<f64>,
    x: &DVector<f64>,
    x_dot: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    transform_state_with(Execution::Sequential, r_rel, x, x_dot)
}

pub fn transform_state_with(
    exec: Execution,
    r_rel: &Matrix3<f64>,
    x: &DVector<f64>,
    x_dot: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let mut xo = x.clone();
    let mut vo = x_dot.clone();
    let exec = if x.len() / 3 >= PARALLEL_TRANSFORM_NODES {
        exec
    } else {
        Execution::Sequential
    };
    for v in [&mut xo, &mut vo] {
        par::for_each_chunk_mut(exec, v.as_mut_slice(), 3, |_, c| {
            let r = r_rel * Vector3::new(c[0], c[1], c[2]);
            c.copy_from_slice(r.as_slice());
        });
    }
    (xo, vo)
}

/// Increments of one RK4 stage.
#[derive(Debug, Clone)]
struct StageIncrement {
    d_eta: DVector<f64>,
    d_vp: Vector3<f64>,
    d_vq: Vector3<f64>,
    d_m: Matrix3<f64>,
}

/// Stepper bound to one model, basis, marker triad and load set.
pub struct FrameSynthesis<'a> {
    model: &'a StructuralModel,
    system: &'a ModalSystem,
    triad: &'a MarkerTriad,
    loads: &'a LoadSpec,
    options: SynthesisOptions,
    n_rigid: usize,
    flex_shapes: DMatrix<f64>,
    rigid_shapes: DMatrix<f64>,
    /// `(Ψ_RᵀMΨ_R)⁻¹Ψ_RᵀM`: rigid content of a displacement field.
    rigid_content: DMatrix<f64>,
    marker_rows: [DMatrix<f64>; 3],
    /// Maps rigid modal accelerations to the mass-weighted mean translation.
    com_accel: DMatrix<f64>,
    com: Vector3<f64>,
    /// Momentum transport data; `None` when the rigid block has fewer than
    /// six modes.
    rigid_fields: Option<RigidFields>,
}

/// Rigid fields about the center of mass, `G = [t1 t2 t3 r1 r2 r3]`.
struct RigidFields {
    g: DMatrix<f64>,
    /// `GᵀM`: momentum of a velocity field.
    gm: DMatrix<f64>,
    /// `(GᵀMG)⁻¹`
    gram_inv: DMatrix<f64>,
    /// Rotational block of `GᵀMG` and its inverse.
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
}

impl<'a> FrameSynthesis<'a> {
    pub fn new(
        model: &'a StructuralModel,
        system: &'a ModalSystem,
        triad: &'a MarkerTriad,
        loads: &'a LoadSpec,
        options: SynthesisOptions,
    ) -> Result<Self> {
        let basis = system.basis();
        if basis.n_dofs() != model.n_dofs() {
            return Err(Error::Dimension {
                what: "basis rows",
                expected: model.n_dofs(),
                found: basis.n_dofs(),
            });
        }
        let nr = basis.n_rigid();
        if nr == 0 {
            return Err(Error::config("model", "modal basis has no rigid-body modes"));
        }
        let marker_rows = marker_rigid_rows(basis, triad)?;
        let nodes = [triad.ref_node, triad.p_node, triad.q_node];
        if nodes[0] == nodes[1] || nodes[0] == nodes[2] || nodes[1] == nodes[2] {
            return Err(Error::config("markers", "marker nodes must be distinct"));
        }
        let r = model.node(triad.ref_node)?;
        let p = model.node(triad.p_node)? - r;
        let q = model.node(triad.q_node)? - r;
        let scale = p.norm().max(q.norm());
        if (p - triad.p_vec).norm() > 1e-9 * scale || (q - triad.q_vec).norm() > 1e-9 * scale {
            return Err(Error::config("markers", "marker vectors do not match model coordinates"));
        }
        let psi = basis.shapes();
        let rigid_shapes = psi.columns(0, nr).into_owned();
        let flex_shapes = psi.columns(nr, basis.n_modes() - nr).into_owned();
        let m = model.mass_matrix();
        let prm = rigid_shapes.transpose() * m;
        let gram = &prm * &rigid_shapes;
        let gram_inv = gram
            .cholesky()
            .ok_or_else(|| Error::Numerical("rigid modal mass is singular".into()))?
            .inverse();
        let rigid_content = gram_inv * prm;

        let mut com_accel = DMatrix::zeros(3, nr);
        for d in 0..3 {
            let t = model.translation_field(d);
            let mt = m * &t;
            let w = &mt / t.dot(&mt);
            com_accel.row_mut(d).copy_from(&(rigid_shapes.tr_mul(&w)).transpose());
        }
        let com = model.center_of_mass();
        let rigid_fields = if nr == 6 {
            let g = DMatrix::from_fn(model.n_dofs(), 6, |i, j| {
                let d = i % 3;
                if j < 3 {
                    if d == j {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    let rho = model.node_coords()[i / 3] - com;
                    Vector3::ith(j - 3, 1.0).cross(&rho)[d]
                }
            });
            let gm = g.transpose() * m;
            let gram = &gm * &g;
            let gram_inv = gram
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numerical("rigid field Gram matrix is singular".into()))?
                .inverse();
            let inertia: Matrix3<f64> = gram.fixed_view::<3, 3>(3, 3).into_owned();
            let inertia_inv = inertia
                .try_inverse()
                .ok_or_else(|| Error::Numerical("rotational inertia is singular".into()))?;
            Some(RigidFields {
                g,
                gm,
                gram_inv,
                inertia,
                inertia_inv,
            })
        } else {
            None
        };
        Ok(FrameSynthesis {
            model,
            system,
            triad,
            loads,
            options,
            n_rigid: nr,
            flex_shapes,
            rigid_shapes,
            rigid_content,
            marker_rows,
            com_accel,
            com,
            rigid_fields,
        })
    }

    pub fn options(&self) -> &SynthesisOptions {
        &self.options
    }

    /// Builds the state at `time` from initial displacement and velocity.
    pub fn initial_state(&self, x0: &DVector<f64>, x_dot0: &DVector<f64>, time: f64) -> Result<(SimState, FrameState)> {
        let n = self.model.n_dofs();
        for (what, v) in [("initial displacement", x0), ("initial velocity", x_dot0)] {
            if v.len() != n {
                return Err(Error::Dimension {
                    what,
                    expected: n,
                    found: v.len(),
                });
            }
        }
        let eta = ModalState::from_parts(&self.system.project(x0), &self.system.project(x_dot0))?;
        let ed = self.derivative(eta.packed(), &Matrix3::identity(), &[time])?;
        let rbm = self.embedded_rbm(&ed);
        Ok((
            SimState {
                x: x0.clone(),
                x_dot: x_dot0.clone(),
                eta,
                v_pr: rbm.v_pr,
                v_qr: rbm.v_qr,
                time,
            },
            FrameState::initial(),
        ))
    }

    /// `η̇` for frame orientation `a_total` and loads averaged over `times`.
    pub fn derivative(&self, eta: &DVector<f64>, a_total: &Matrix3<f64>, times: &[f64]) -> Result<DVector<f64>> {
        let f_x = self.loads.nodal_forces(times, a_total, self.model.n_dofs());
        let f_q = self.system.basis().shapes().tr_mul(&f_x);
        modal_state_derivative(self.system, eta, &f_q)
    }

    pub fn embedded_rbm(&self, eta_dot: &DVector<f64>) -> EmbeddedRbm {
        rbm_from_rows(&self.marker_rows, eta_dot, self.system.n_modes(), self.n_rigid)
    }

    fn momentum_transport(&self) -> Option<&RigidFields> {
        match self.options.velocity_transport {
            VelocityTransport::Material => self.rigid_fields.as_ref(),
            VelocityTransport::Nodal => None,
        }
    }

    /// Moves displacement and velocity from frame `n` to a frame rotated by
    /// `r_rel` relative to it.
    pub fn transform(&self, r_rel: &Matrix3<f64>, x: &DVector<f64>, x_dot: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let exec = self.options.execution;
        let Some(rf) = self.momentum_transport() else {
            return transform_state_with(exec, r_rel, x, x_dot);
        };
        let h = &rf.gm * x_dot;
        let elastic = x_dot - &rf.g * (&rf.gram_inv * &h);
        let (xo, vo) = transform_state_with(exec, r_rel, x, &elastic);
        // Nodal rotation gives the elastic part some rigid momentum; drop it.
        let vo = &vo - &rf.g * (&rf.gram_inv * (&rf.gm * &vo));
        let mut h_new = h;
        for k in [0, 3] {
            let v = r_rel * h_new.fixed_rows::<3>(k);
            h_new.fixed_rows_mut::<3>(k).copy_from(&v);
        }
        (xo, vo + &rf.g * (&rf.gram_inv * h_new))
    }

    /// `−J⁻¹(ω × Jω)` for body rate `omega`, zero under nodal transport.
    pub fn gyroscopic_acceleration(&self, omega: &Vector3<f64>) -> Vector3<f64> {
        match self.momentum_transport() {
            Some(rf) => -rf.inertia_inv * omega.cross(&(rf.inertia * omega)),
            None => Vector3::zeros(),
        }
    }

    /// Embedded rigid-body marker kinematics. Under material transport the
    /// centripetal and gyroscopic parts are added to the linear modal
    /// accelerations.
    pub fn rigid_marker_kinematics(&self, eta_dot: &DVector<f64>, omega: &Vector3<f64>) -> EmbeddedRbm {
        let mut rbm = self.embedded_rbm(eta_dot);
        if self.momentum_transport().is_some() {
            let gyro = self.gyroscopic_acceleration(omega);
            for (a, r) in [(&mut rbm.a_pr, self.triad.p_vec), (&mut rbm.a_qr, self.triad.q_vec)] {
                *a += gyro.cross(&r) + omega.cross(&omega.cross(&r));
            }
        }
        rbm
    }

    fn project_state(&self, x: &DVector<f64>, x_dot: &DVector<f64>) -> Result<ModalState> {
        ModalState::from_parts(&self.system.project(x), &self.system.project(x_dot))
    }

    /// `x + s·Ψ_FΔq_F`, `ẋ + s·ΨΔq̇`.
    fn advance(&self, x: &DVector<f64>, x_dot: &DVector<f64>, d_eta: &DVector<f64>, s: f64) -> (DVector<f64>, DVector<f64>) {
        let m = self.system.n_modes();
        let nr = self.n_rigid;
        let xo = x + &self.flex_shapes * d_eta.rows(nr, m - nr) * s;
        let vo = x_dot + self.system.basis().shapes() * d_eta.rows(m, m) * s;
        (xo, vo)
    }

    fn stage_increment(
        &self,
        log_rot: &LogRotation,
        v_pr: &Vector3<f64>,
        v_qr: &Vector3<f64>,
        eta_dot: &DVector<f64>,
        dt: f64,
    ) -> Result<StageIncrement> {
        let omega = angular_velocity_g(self.triad, v_pr, v_qr);
        let rbm = self.rigid_marker_kinematics(eta_dot, &omega);
        Ok(StageIncrement {
            d_eta: eta_dot * dt,
            d_vp: relative_velocity_rate(v_pr, &rbm.a_pr, &omega) * dt,
            d_vq: relative_velocity_rate(v_qr, &rbm.a_qr, &omega) * dt,
            d_m: dexp_inv_rate(log_rot, &omega)? * dt,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn later_stage(
        &self,
        state: &SimState,
        frame: &FrameState,
        exp_n: &Matrix3<f64>,
        v0: (&Vector3<f64>, &Vector3<f64>),
        prev: &StageIncrement,
        scale: f64,
        times: &[f64],
        dt: f64,
    ) -> Result<StageIncrement> {
        let v_pr = v0.0 + prev.d_vp * scale;
        let v_qr = v0.1 + prev.d_vq * scale;
        let log_k = frame.log_rot.advanced(&prev.d_m, scale);
        let exp_k = rotation_exp(&log_k);
        let r_k = exp_k * exp_n.transpose();
        let (x, x_dot) = self.advance(&state.x, &state.x_dot, &prev.d_eta, scale);
        let (x, x_dot) = self.transform(&r_k, &x, &x_dot);
        let eta_k = self.project_state(&x, &x_dot)?;
        let eta_dot = self.derivative(eta_k.packed(), &(exp_k * frame.base_rot), times)?;
        self.stage_increment(&log_k, &v_pr, &v_qr, &eta_dot, dt)
    }

    /// One step of length `dt`; rebases and retries once when the
    /// log-rotation reaches the singular band of the dexp inverse.
    pub fn rk4_step(&self, state: &SimState, frame: &FrameState, dt: f64) -> Result<(SimState, FrameState)> {
        match self.try_step(state, frame, dt) {
            Err(Error::RebaseRequired { .. }) => self.try_step(state, &frame.rebased(), dt),
            r => r,
        }
    }

    fn try_step(&self, state: &SimState, frame: &FrameState, dt: f64) -> Result<(SimState, FrameState)> {
        let t0 = state.time;
        let t1 = t0 + dt;
        let exp_n = rotation_exp(&frame.log_rot);
        let a_n = exp_n * frame.base_rot;

        let eta_dot1 = self.derivative(state.eta.packed(), &a_n, &[t0])?;
        let (v_pr, v_qr) = match self.options.marker_velocities {
            MarkerVelocitySource::Reextract => {
                let rbm = self.embedded_rbm(&eta_dot1);
                (rbm.v_pr, rbm.v_qr)
            }
            MarkerVelocitySource::Integrated => (state.v_pr, state.v_qr),
        };
        let k1 = self.stage_increment(&frame.log_rot, &v_pr, &v_qr, &eta_dot1, dt)?;
        let v0 = (&v_pr, &v_qr);
        let k2 = self.later_stage(state, frame, &exp_n, v0, &k1, 0.5, &[t0, t1], dt)?;
        let k3 = self.later_stage(state, frame, &exp_n, v0, &k2, 0.5, &[t0, t1], dt)?;
        let k4 = self.later_stage(state, frame, &exp_n, v0, &k3, 1.0, &[t1], dt)?;

        let d_eta = (&k1.d_eta + &k2.d_eta * 2.0 + &k3.d_eta * 2.0 + &k4.d_eta) / 6.0;
        let d_m = (k1.d_m + k2.d_m * 2.0 + k3.d_m * 2.0 + k4.d_m) / 6.0;
        let d_vp = (k1.d_vp + k2.d_vp * 2.0 + k3.d_vp * 2.0 + k4.d_vp) / 6.0;
        let d_vq = (k1.d_vq + k2.d_vq * 2.0 + k3.d_vq * 2.0 + k4.d_vq) / 6.0;

        let log_next = frame.log_rot.advanced(&d_m, 1.0);
        let exp_next = rotation_exp(&log_next);
        let r_rel = exp_next * exp_n.transpose();
        let (x, x_dot) = self.advance(&state.x, &state.x_dot, &d_eta, 1.0);
        let (mut x, x_dot) = self.transform(&r_rel, &x, &x_dot);
        let q_r = &self.rigid_content * &x;
        x -= &self.rigid_shapes * q_r;
        let eta = self.project_state(&x, &x_dot)?;

        let r_ref = self.model.node(self.triad.ref_node)?;
        let d_q_r = d_eta.rows(0, self.n_rigid);
        let dx = &self.marker_rows[0] * d_q_r;
        let dx_ref = Vector3::new(dx[0], dx[1], dx[2]);
        let a_next = exp_next * frame.base_rot;
        let origin = frame.origin + a_n.tr_mul(&(r_ref + dx_ref)) - a_next.tr_mul(&r_ref);

        let mut next_frame = FrameState {
            log_rot: log_next,
            base_rot: frame.base_rot,
            origin,
        };
        if log_next.theta() > self.options.rebase_angle {
            next_frame = next_frame.rebased();
        }
        Ok((
            SimState {
                x,
                x_dot,
                eta,
                v_pr: v_pr + d_vp,
                v_qr: v_qr + d_vq,
                time: t1,
            },
            next_frame,
        ))
    }

    /// Body rates, modal coordinates and global point kinematics at the
    /// current state.
    pub fn record(&self, state: &SimState, frame: &FrameState, nodes: &[usize]) -> Result<Record> {
        let m = self.system.n_modes();
        let nr = self.n_rigid;
        let a = frame.a_total();
        let eta_dot = self.derivative(state.eta.packed(), &a, &[state.time])?;
        let rbm = self.embedded_rbm(&eta_dot);
        let (v_pr, v_qr) = match self.options.marker_velocities {
            MarkerVelocitySource::Reextract => (rbm.v_pr, rbm.v_qr),
            MarkerVelocitySource::Integrated => (state.v_pr, state.v_qr),
        };
        let omega = angular_velocity_g(self.triad, &v_pr, &v_qr);
        let full = self.rigid_marker_kinematics(&eta_dot, &omega);
        let alpha = angular_acceleration_h(self.triad, &v_pr, &v_qr, &full.a_pr, &full.a_qr, &omega);
        let dv = (state.v_pr - rbm.v_pr).norm() + (state.v_qr - rbm.v_qr).norm();
        let vref = rbm.v_pr.norm() + rbm.v_qr.norm();
        let marker_drift = if vref > 0.0 { dv / vref } else { dv };

        let gyro = self.gyroscopic_acceleration(&omega);
        let qdd = eta_dot.rows(m, m);
        let ac = &self.com_accel * eta_dot.rows(m, nr);
        let a_c = Vector3::new(ac[0], ac[1], ac[2]);
        let psi = self.system.basis().shapes();
        let mut points = Vec::with_capacity(nodes.len());
        for &node in nodes {
            let r = self.model.node(node)?;
            let i = 3 * node;
            let x = Vector3::new(state.x[i], state.x[i + 1], state.x[i + 2]);
            let xd = Vector3::new(state.x_dot[i], state.x_dot[i + 1], state.x_dot[i + 2]);
            let lin = psi.rows(i, 3) * qdd;
            let rho = r - self.com;
            let centripetal = omega.cross(&omega.cross(&rho));
            let mut acc = Vector3::new(lin[0], lin[1], lin[2]);
            if self.momentum_transport().is_some() {
                acc += gyro.cross(&rho) + centripetal;
            }
            let acc_rbm = a_c + alpha.cross(&rho) + centripetal;
            points.push(PointKinematics {
                node,
                position: frame.to_global_point(&(r + x)),
                velocity: a.tr_mul(&xd),
                acceleration: a.tr_mul(&acc),
                acceleration_rbm: a.tr_mul(&acc_rbm),
            });
        }
        Ok(Record {
            time: state.time,
            frame: *frame,
            omega_body: omega,
            alpha_body: alpha,
            modal_coords: state.eta.coords().iter().copied().collect(),
            points,
            marker_drift,
        })
    }
}

fn check_finite(state: &SimState, frame: &FrameState, step: usize) -> Result<()> {
    let ok = state.x.iter().all(|v| v.is_finite())
        && state.x_dot.iter().all(|v| v.is_finite())
        && state.eta.packed().iter().all(|v| v.is_finite())
        && frame.log_rot.matrix().iter().all(|v| v.is_finite())
        && frame.origin.iter().all(|v| v.is_finite());
    if ok {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            time: state.time,
        })
    }
}

fn check_nodes(model: &StructuralModel, nodes: &[usize]) -> Result<()> {
    for &n in nodes {
        if n >= model.n_nodes() {
            return Err(Error::config("output.nodes", format!("node {n} does not exist")));
        }
    }
    Ok(())
}

/// Runs a flexible simulation, handing each record to `sink` as it is
/// produced. Records already passed to `sink` stay valid if a later step
/// fails.
pub fn simulate_streaming<F>(model: &StructuralModel, system: &ModalSystem, params: &SimParams, mut sink: F) -> Result<()>
where
    F: FnMut(Record) -> Result<()>,
{
    let n_steps = step_count(params.dt, params.t_end)?;
    if params.record_every == 0 {
        return Err(Error::config("output.record_every", "must be at least 1"));
    }
    check_nodes(model, &params.output_nodes)?;
    params.loads.validate(model.n_nodes(), 0.0, params.t_end)?;
    let synth = FrameSynthesis::new(model, system, &params.triad, &params.loads, params.options)?;
    let n = model.n_dofs();
    let zeros = DVector::zeros(n);
    let x0 = params.x0.as_ref().unwrap_or(&zeros);
    let xd0 = params.x_dot0.as_ref().unwrap_or(&zeros);
    let (mut state, mut frame) = synth.initial_state(x0, xd0, 0.0)?;
    sink(synth.record(&state, &frame, &params.output_nodes)?)?;
    let mut warned = false;
    for k in 1..=n_steps {
        let (mut s, f) = synth.rk4_step(&state, &frame, params.dt)?;
        s.time = k as f64 * params.dt;
        check_finite(&s, &f, k)?;
        state = s;
        frame = f;
        if k % params.record_every == 0 || k == n_steps {
            let rec = synth.record(&state, &frame, &params.output_nodes)?;
            if cfg!(debug_assertions) && !warned && rec.marker_drift > MARKER_DRIFT_TOL {
                warned = true;
                log::warn!("step {k}: marker velocity drift {:.3e}", rec.marker_drift);
            }
            sink(rec)?;
        }
    }
    Ok(())
}

/// Runs a flexible simulation and collects the trajectory.
pub fn simulate(model: &StructuralModel, system: &ModalSystem, params: &SimParams) -> Result<Trajectory> {
    let mut traj = Trajectory {
        output_nodes: params.output_nodes.clone(),
        n_modes: system.n_modes(),
        records: Vec::new(),
    };
    simulate_streaming(model, system, params, |r| {
        traj.records.push(r);
        Ok(())
    })?;
    Ok(traj)
}

/// Global series of `query_nodes` from a recorded trajectory.
pub fn reconstruct_global(trajectory: &Trajectory, model: &StructuralModel, query_nodes: &[usize]) -> Result<Vec<NodeSeries>> {
    for &n in query_nodes {
        model.node(n)?;
    }
    trajectory.node_series(query_nodes)
}

/// Conventional modal transient in the fixed global frame with the same RK4
/// and force sampling, for small-motion comparisons. Positions are
/// `r + Ψq`; loads are applied with their global directions.
pub fn fixed_frame_transient(
    model: &StructuralModel,
    system: &ModalSystem,
    loads: &LoadSpec,
    x0: &DVector<f64>,
    x_dot0: &DVector<f64>,
    dt: f64,
    t_end: f64,
    nodes: &[usize],
) -> Result<Vec<NodeSeries>> {
    let n_steps = step_count(dt, t_end)?;
    check_nodes(model, nodes)?;
    loads.validate(model.n_nodes(), 0.0, t_end)?;
    let psi = system.basis().shapes();
    let m = system.n_modes();
    let a = Matrix3::identity();
    let deriv = |eta: &DVector<f64>, times: &[f64]| -> Result<DVector<f64>> {
        let f_q = psi.tr_mul(&loads.nodal_forces(times, &a, model.n_dofs()));
        modal_state_derivative(system, eta, &f_q)
    };
    let mut eta = ModalState::from_parts(&system.project(x0), &system.project(x_dot0))?.packed().clone();
    let mut series: Vec<NodeSeries> = nodes
        .iter()
        .map(|&node| NodeSeries {
            node,
            ..Default::default()
        })
        .collect();
    let mut push = |t: f64, eta: &DVector<f64>| -> Result<()> {
        let ed = deriv(eta, &[t])?;
        let x = psi * eta.rows(0, m);
        let xd = psi * eta.rows(m, m);
        let xdd = psi * ed.rows(m, m);
        for s in series.iter_mut() {
            let i = 3 * s.node;
            let v3 = |v: &DVector<f64>| Vector3::new(v[i], v[i + 1], v[i + 2]);
            s.time.push(t);
            s.position.push(model.node_coords()[s.node] + v3(&x));
            s.velocity.push(v3(&xd));
            s.acceleration.push(v3(&xdd));
            s.acceleration_rbm.push(Vector3::zeros());
        }
        Ok(())
    };
    push(0.0, &eta)?;
    for k in 1..=n_steps {
        let t0 = (k - 1) as f64 * dt;
        let t1 = k as f64 * dt;
        let k1 = deriv(&eta, &[t0])? * dt;
        let k2 = deriv(&(&eta + &k1 * 0.5), &[t0, t1])? * dt;
        let k3 = deriv(&(&eta + &k2 * 0.5), &[t0, t1])? * dt;
        let k4 = deriv(&(&eta + &k3), &[t1])? * dt;
        eta += (k1 + k2 * 2.0 + k3 * 2.0 + k4) / 6.0;
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k, time: t1 });
        }
        push(t1, &eta)?;
    }
    Ok(series)
}
