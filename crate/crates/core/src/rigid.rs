//! Rigid-body reference solver: Newton's law for the center of mass and
//! Euler's equations in the principal frame.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::loads::{LoadFrame, TimeSeries};
use crate::rotation::{dexp_inv_rate, rotation_exp, LogRotation};
use crate::synthesis::step_count;
use crate::trajectory::{FrameState, PointKinematics, Record, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodyProps {
    /// Mg
    pub mass: f64,
    /// Principal moments about the center of mass (Mg·mm²).
    pub inertia_principal: Vector3<f64>,
    /// Center of mass in material coordinates (mm).
    pub com: Vector3<f64>,
    /// Rows are the principal axes in material components.
    pub principal_axes: Matrix3<f64>,
}

impl RigidBodyProps {
    pub fn new(
        mass: f64,
        inertia_principal: Vector3<f64>,
        com: Vector3<f64>,
        principal_axes: Matrix3<f64>,
    ) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::config("rigid.mass", "must be positive"));
        }
        let i = inertia_principal;
        if i.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::config("rigid.inertia_principal", "moments must be positive"));
        }
        let tol = 1e-12 * i.amax();
        for k in 0..3 {
            if i[(k + 1) % 3] + i[(k + 2) % 3] < i[k] - tol {
                return Err(Error::config(
                    "rigid.inertia_principal",
                    "moments violate the triangle inequality",
                ));
            }
        }
        let orth = (principal_axes * principal_axes.transpose() - Matrix3::identity()).amax();
        if orth > 1e-9 || (principal_axes.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::config("rigid.principal_axes", "must be a proper rotation"));
        }
        Ok(RigidBodyProps {
            mass,
            inertia_principal,
            com,
            principal_axes,
        })
    }

    /// From a full inertia tensor about the center of mass.
    pub fn from_tensor(mass: f64, com: Vector3<f64>, inertia: &Matrix3<f64>) -> Result<Self> {
        let sym = (inertia + inertia.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut axes = Matrix3::zeros();
        let mut moments = Vector3::zeros();
        for (row, &k) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(k).into_owned();
            // deterministic sign: largest component positive
            if v[v.iamax()] < 0.0 {
                v = -v;
            }
            axes.set_row(row, &v.transpose());
            moments[row] = eig.eigenvalues[k];
        }
        if axes.determinant() < 0.0 {
            let r = -axes.row(2);
            axes.set_row(2, &r);
        }
        Self::new(mass, moments, com, axes)
    }

    /// Inertia tensor about the center of mass in material components.
    pub fn inertia_tensor(&self) -> Matrix3<f64> {
        self.principal_axes.transpose() * Matrix3::from_diagonal(&self.inertia_principal) * self.principal_axes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidState {
    /// Global (mm)
    pub com_pos: Vector3<f64>,
    /// Global (mm/s)
    pub com_vel: Vector3<f64>,
    pub orientation: LogRotation,
    pub base: Matrix3<f64>,
    /// Body components (rad/s)
    pub omega_body: Vector3<f64>,
}

impl RigidState {
    /// At rest in the material configuration.
    pub fn at_rest(props: &RigidBodyProps) -> Self {
        RigidState {
            com_pos: props.com,
            com_vel: Vector3::zeros(),
            orientation: LogRotation::zero(),
            base: Matrix3::identity(),
            omega_body: Vector3::zeros(),
        }
    }

    /// Maps global components to body components.
    pub fn a_total(&self) -> Matrix3<f64> {
        rotation_exp(&self.orientation) * self.base
    }

    /// Material-coordinate origin of the body, as a frame pose.
    pub fn frame(&self, props: &RigidBodyProps) -> FrameState {
        let a = self.a_total();
        FrameState {
            log_rot: self.orientation,
            base_rot: self.base,
            origin: self.com_pos - a.tr_mul(&props.com),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidRate {
    pub com_vel: Vector3<f64>,
    pub com_acc: Vector3<f64>,
    pub log_rate: Matrix3<f64>,
    pub omega_dot: Vector3<f64>,
}

/// A force applied at a material point.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidLoad {
    pub point: Vector3<f64>,
    /// Unit direction.
    pub direction: Vector3<f64>,
    pub magnitude: TimeSeries,
    pub frame: LoadFrame,
}

/// Total force (global) and torque about the center of mass (body) for
/// loads averaged over `times`.
pub fn resultant(
    props: &RigidBodyProps,
    a_total: &Matrix3<f64>,
    loads: &[RigidLoad],
    times: &[f64],
) -> (Vector3<f64>, Vector3<f64>) {
    let mut force = Vector3::zeros();
    let mut torque = Vector3::zeros();
    for l in loads {
        let mag = times.iter().map(|&t| l.magnitude.value_at(t)).sum::<f64>() / times.len() as f64;
        let (f_global, f_body) = match l.frame {
            LoadFrame::Global => {
                let f = l.direction * mag;
                (f, a_total * f)
            }
            LoadFrame::Body => {
                let f = l.direction * mag;
                (a_total.tr_mul(&f), f)
            }
        };
        force += f_global;
        torque += (l.point - props.com).cross(&f_body);
    }
    (force, torque)
}

fn euler_rates(props: &RigidBodyProps, omega_body: &Vector3<f64>, torque_body: &Vector3<f64>) -> Vector3<f64> {
    let p = &props.principal_axes;
    let w = p * omega_body;
    let tau = p * torque_body;
    let i = &props.inertia_principal;
    let wd = Vector3::new(
        ((i[1] - i[2]) * w[1] * w[2] + tau[0]) / i[0],
        ((i[2] - i[0]) * w[2] * w[0] + tau[1]) / i[1],
        ((i[0] - i[1]) * w[0] * w[1] + tau[2]) / i[2],
    );
    p.tr_mul(&wd)
}

/// State rate with loads averaged over `times`.
pub fn rigid_derivative(
    props: &RigidBodyProps,
    state: &RigidState,
    loads: &[RigidLoad],
    times: &[f64],
) -> Result<RigidRate> {
    let a = state.a_total();
    let (force, torque) = resultant(props, &a, loads, times);
    Ok(RigidRate {
        com_vel: state.com_vel,
        com_acc: force / props.mass,
        log_rate: dexp_inv_rate(&state.orientation, &state.omega_body)?,
        omega_dot: euler_rates(props, &state.omega_body, &torque),
    })
}

fn advance(state: &RigidState, rate: &RigidRate, h: f64) -> RigidState {
    RigidState {
        com_pos: state.com_pos + rate.com_vel * h,
        com_vel: state.com_vel + rate.com_acc * h,
        orientation: state.orientation.advanced(&rate.log_rate, h),
        base: state.base,
        omega_body: state.omega_body + rate.omega_dot * h,
    }
}

/// One RK4 step with the same endpoint force sampling as the flexible
/// solver.
pub fn rigid_step(props: &RigidBodyProps, state: &RigidState, loads: &[RigidLoad], t0: f64, dt: f64) -> Result<RigidState> {
    let state = if state.orientation.theta() > std::f64::consts::PI {
        let (orientation, base) = crate::rotation::rebase(&state.orientation, &state.base);
        RigidState {
            orientation,
            base,
            ..state.clone()
        }
    } else {
        state.clone()
    };
    let t1 = t0 + dt;
    let k1 = rigid_derivative(props, &state, loads, &[t0])?;
    let k2 = rigid_derivative(props, &advance(&state, &k1, 0.5 * dt), loads, &[t0, t1])?;
    let k3 = rigid_derivative(props, &advance(&state, &k2, 0.5 * dt), loads, &[t0, t1])?;
    let k4 = rigid_derivative(props, &advance(&state, &k3, dt), loads, &[t1])?;
    let w = dt / 6.0;
    let combined = RigidRate {
        com_vel: k1.com_vel + k2.com_vel * 2.0 + k3.com_vel * 2.0 + k4.com_vel,
        com_acc: k1.com_acc + k2.com_acc * 2.0 + k3.com_acc * 2.0 + k4.com_acc,
        log_rate: k1.log_rate + k2.log_rate * 2.0 + k3.log_rate * 2.0 + k4.log_rate,
        omega_dot: k1.omega_dot + k2.omega_dot * 2.0 + k3.omega_dot * 2.0 + k4.omega_dot,
    };
    Ok(advance(&state, &combined, w))
}

/// Record of the rigid state at `time`; `points` are material coordinates
/// tagged with an output id.
pub fn rigid_record(
    props: &RigidBodyProps,
    state: &RigidState,
    loads: &[RigidLoad],
    time: f64,
    points: &[(usize, Vector3<f64>)],
) -> Result<Record> {
    let rate = rigid_derivative(props, state, loads, &[time])?;
    let a = state.a_total();
    let w = state.omega_body;
    let wd = rate.omega_dot;
    let kin = points
        .iter()
        .map(|&(node, r)| {
            let rho = r - props.com;
            let acc = rate.com_acc + a.tr_mul(&(wd.cross(&rho) + w.cross(&w.cross(&rho))));
            PointKinematics {
                node,
                position: state.com_pos + a.tr_mul(&rho),
                velocity: state.com_vel + a.tr_mul(&w.cross(&rho)),
                acceleration: acc,
                acceleration_rbm: acc,
            }
        })
        .collect();
    Ok(Record {
        time,
        frame: state.frame(props),
        omega_body: w,
        alpha_body: wd,
        modal_coords: Vec::new(),
        points: kin,
        marker_drift: 0.0,
    })
}

fn check_finite(s: &RigidState, step: usize, time: f64) -> Result<()> {
    let ok = s.com_pos.iter().chain(s.com_vel.iter()).chain(s.omega_body.iter()).all(|v| v.is_finite())
        && s.orientation.matrix().iter().all(|v| v.is_finite());
    if ok {
        Ok(())
    } else {
        Err(Error::Divergence { step, time })
    }
}

/// Streams rigid records to `sink`; see [`simulate_rigid`].
#[allow(clippy::too_many_arguments)]
pub fn simulate_rigid_streaming<F>(
    props: &RigidBodyProps,
    loads: &[RigidLoad],
    dt: f64,
    t_end: f64,
    initial: &RigidState,
    points: &[(usize, Vector3<f64>)],
    record_every: usize,
    mut sink: F,
) -> Result<()>
where
    F: FnMut(Record) -> Result<()>,
{
    let n_steps = step_count(dt, t_end)?;
    if record_every == 0 {
        return Err(Error::config("output.record_every", "must be at least 1"));
    }
    let mut state = initial.clone();
    sink(rigid_record(props, &state, loads, 0.0, points)?)?;
    for k in 1..=n_steps {
        let t0 = (k - 1) as f64 * dt;
        state = rigid_step(props, &state, loads, t0, dt)?;
        let t = k as f64 * dt;
        check_finite(&state, k, t)?;
        if k % record_every == 0 || k == n_steps {
            sink(rigid_record(props, &state, loads, t, points)?)?;
        }
    }
    Ok(())
}

/// RK4 integration of the rigid body from `initial` over `[0, t_end]`.
pub fn simulate_rigid(
    props: &RigidBodyProps,
    loads: &[RigidLoad],
    dt: f64,
    t_end: f64,
    initial: &RigidState,
    points: &[(usize, Vector3<f64>)],
) -> Result<Trajectory> {
    let mut traj = Trajectory {
        output_nodes: points.iter().map(|p| p.0).collect(),
        n_modes: 0,
        records: Vec::new(),
    };
    simulate_rigid_streaming(props, loads, dt, t_end, initial, points, 1, |r| {
        traj.records.push(r);
        Ok(())
    })?;
    Ok(traj)
}
