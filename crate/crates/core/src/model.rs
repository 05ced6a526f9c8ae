//! Discretized structural model, modal reduction and the modal state-space
//! operator.
//!
//! Units are fixed to mm, Mg, s and N throughout. Every node carries three
//! translational DOFs laid out consecutively (`3i .. 3i + 3`).

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, DVectorView, Dyn, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

/// Relative tolerance for matrix symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// A flexible mode whose frequency falls below this fraction of the highest
/// retained frequency is classified as zero-frequency.
pub const ZERO_FREQUENCY_RATIO: f64 = 1e-6;

pub const DOFS_PER_NODE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralModel {
    node_coords: Vec<Vector3<f64>>,
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    damping: Option<DMatrix<f64>>,
}

/// Largest `|a_ij - a_ji|` relative to the largest entry, with its location.
pub(crate) fn worst_asymmetry(m: &DMatrix<f64>) -> (usize, usize, f64) {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut worst = (0, 0, 0.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let rel = (m[(i, j)] - m[(j, i)]).abs() / scale;
            if rel > worst.2 {
                worst = (i, j, rel);
            }
        }
    }
    worst
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &'static str) -> Result<()> {
    if m.nrows() != n {
        return Err(Error::Dimension {
            what,
            expected: n,
            found: m.nrows(),
        });
    }
    if m.ncols() != n {
        return Err(Error::Dimension {
            what,
            expected: n,
            found: m.ncols(),
        });
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>, matrix: &'static str) -> Result<()> {
    let (row, col, relative) = worst_asymmetry(m);
    if relative > SYMMETRY_TOL {
        return Err(Error::Asymmetric {
            matrix,
            row,
            col,
            relative,
        });
    }
    Ok(())
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl StructuralModel {
    /// Validates and builds a model. Matrices are symmetrized after the
    /// symmetry check so later congruences stay exactly symmetric.
    pub fn new(
        node_coords: Vec<Vector3<f64>>,
        mass: DMatrix<f64>,
        stiffness: DMatrix<f64>,
        damping: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if node_coords.is_empty() {
            return Err(Error::InvalidModel("model has no nodes".into()));
        }
        let n = DOFS_PER_NODE * node_coords.len();
        check_square(&mass, n, "mass matrix")?;
        check_square(&stiffness, n, "stiffness matrix")?;
        check_symmetric(&mass, "mass")?;
        check_symmetric(&stiffness, "stiffness")?;
        if let Some(c) = &damping {
            check_square(c, n, "damping matrix")?;
            check_symmetric(c, "damping")?;
        }
        if node_coords.iter().any(|c| !c.iter().all(|x| x.is_finite()))
            || !mass.iter().chain(stiffness.iter()).all(|x| x.is_finite())
        {
            return Err(Error::InvalidModel("non-finite coordinate or matrix entry".into()));
        }

        let mass = symmetrize(&mass);
        let stiffness = symmetrize(&stiffness);
        if Cholesky::new(mass.clone()).is_none() {
            return Err(Error::InvalidModel("mass matrix is not positive definite".into()));
        }
        let k_eigs = SymmetricEigen::new(stiffness.clone()).eigenvalues;
        let k_max = k_eigs.amax();
        let k_min = k_eigs.min();
        if k_min < -1e-9 * k_max.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidModel(format!(
                "stiffness matrix is not positive semidefinite (eigenvalue {k_min:.3e})"
            )));
        }
        Ok(StructuralModel {
            node_coords,
            mass,
            stiffness,
            damping: damping.map(|c| symmetrize(&c)),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_dofs(&self) -> usize {
        DOFS_PER_NODE * self.node_coords.len()
    }

    pub fn node_coords(&self) -> &[Vector3<f64>] {
        &self.node_coords
    }

    pub fn node(&self, i: usize) -> Result<Vector3<f64>> {
        self.node_coords.get(i).copied().ok_or(Error::UnknownNode(i))
    }

    /// DOF indices of node `i`.
    pub fn dofs(i: usize) -> Range<usize> {
        DOFS_PER_NODE * i..DOFS_PER_NODE * (i + 1)
    }

    pub fn mass_matrix(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn stiffness_matrix(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn damping_matrix(&self) -> Option<&DMatrix<f64>> {
        self.damping.as_ref()
    }

    /// Dimension of the stiffness null space, counting eigenvalues below
    /// `rel_tol` times the largest.
    pub fn stiffness_null_dim(&self, rel_tol: f64) -> usize {
        let eigs = SymmetricEigen::new(self.stiffness.clone()).eigenvalues;
        let max = eigs.amax();
        eigs.iter().filter(|&&l| l.abs() <= rel_tol * max).count()
    }

    /// Unit translation along axis `d` at every node.
    pub(crate) fn translation_field(&self, d: usize) -> DVector<f64> {
        DVector::from_fn(self.n_dofs(), |i, _| if i % 3 == d { 1.0 } else { 0.0 })
    }

    /// Center of mass in the mass-matrix inner product.
    pub fn center_of_mass(&self) -> Vector3<f64> {
        let mut com = Vector3::zeros();
        for d in 0..3 {
            let t = self.translation_field(d);
            let mt = &self.mass * &t;
            let coords = DVector::from_fn(self.n_dofs(), |i, _| {
                if i % 3 == d {
                    self.node_coords[i / 3][d]
                } else {
                    0.0
                }
            });
            com[d] = coords.dot(&mt) / t.dot(&mt);
        }
        com
    }
}

/// Mode-shape matrix with the rigid-body block first.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalBasis {
    shapes: DMatrix<f64>,
    n_rigid: usize,
    frequencies: Vec<f64>,
    mass_normalized: bool,
}

impl ModalBasis {
    /// Builds a basis from shapes and frequencies (Hz), rescaling every
    /// column to unit modal mass.
    pub fn new(
        model: &StructuralModel,
        shapes: DMatrix<f64>,
        n_rigid: usize,
        frequencies: Vec<f64>,
    ) -> Result<Self> {
        if shapes.nrows() != model.n_dofs() {
            return Err(Error::Dimension {
                what: "mode shape rows",
                expected: model.n_dofs(),
                found: shapes.nrows(),
            });
        }
        if frequencies.len() != shapes.ncols() {
            return Err(Error::Dimension {
                what: "mode frequencies",
                expected: shapes.ncols(),
                found: frequencies.len(),
            });
        }
        if n_rigid > shapes.ncols() {
            return Err(Error::Dimension {
                what: "rigid mode count",
                expected: shapes.ncols(),
                found: n_rigid,
            });
        }
        let m = model.mass_matrix();
        let mut shapes = shapes;
        for mut col in shapes.column_iter_mut() {
            let mm = col.dot(&(m * &col));
            if !(mm > 0.0) {
                return Err(Error::Numerical("mode shape with zero modal mass".into()));
            }
            col /= mm.sqrt();
        }
        let gram = shapes.transpose() * m * &shapes;
        let off = (gram - DMatrix::identity(shapes.ncols(), shapes.ncols())).amax();
        Ok(ModalBasis {
            shapes,
            n_rigid,
            frequencies,
            mass_normalized: off < 1e-8,
        })
    }

    pub fn shapes(&self) -> &DMatrix<f64> {
        &self.shapes
    }

    pub fn rigid_shapes(&self) -> DMatrix<f64> {
        self.shapes.columns(0, self.n_rigid).into_owned()
    }

    pub fn n_modes(&self) -> usize {
        self.shapes.ncols()
    }

    pub fn n_rigid(&self) -> usize {
        self.n_rigid
    }

    pub fn n_dofs(&self) -> usize {
        self.shapes.nrows()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn is_mass_normalized(&self) -> bool {
        self.mass_normalized
    }

    pub fn is_rigid(&self, mode: usize) -> bool {
        mode < self.n_rigid
    }
}

/// Mass-orthonormalizes `cols` against the already orthonormal `basis`
/// columns and each other. Columns whose remaining norm drops below
/// `drop_tol` of their original norm are discarded.
fn mass_gram_schmidt(
    m: &DMatrix<f64>,
    basis: &[DVector<f64>],
    cols: impl IntoIterator<Item = DVector<f64>>,
    drop_tol: f64,
) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for mut v in cols {
        let norm0 = v.dot(&(m * &v)).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        // two passes keep orthogonality at round-off level
        for _ in 0..2 {
            for b in basis.iter().chain(out.iter()) {
                let c = b.dot(&(m * &v));
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.dot(&(m * &v)).sqrt();
        if norm > drop_tol * norm0 {
            out.push(v / norm);
        }
    }
    out
}

fn rigid_candidates(model: &StructuralModel) -> Vec<DVector<f64>> {
    let com = model.center_of_mass();
    let n = model.n_dofs();
    let mut cols: Vec<DVector<f64>> = (0..3).map(|d| model.translation_field(d)).collect();
    for j in 0..3 {
        let axis = Vector3::ith(j, 1.0);
        let mut v = DVector::zeros(n);
        for (i, r) in model.node_coords().iter().enumerate() {
            let u = axis.cross(&(r - com));
            v.rows_mut(3 * i, 3).copy_from(&u);
        }
        cols.push(v);
    }
    cols
}

/// Rigid modes that the geometry supports: three translations plus as many
/// independent infinitesimal rotations about the center of mass as exist
/// (none for a single node, two for collinear nodes).
pub fn rigid_modes_spanning(model: &StructuralModel) -> DMatrix<f64> {
    let cols = mass_gram_schmidt(model.mass_matrix(), &[], rigid_candidates(model), 1e-8);
    DMatrix::from_columns(&cols)
}

/// Six mass-orthonormal rigid modes: unit translations along X1, X2, X3
/// followed by infinitesimal rotations about the center of mass.
pub fn rigid_modes_geometric(model: &StructuralModel) -> Result<DMatrix<f64>> {
    let r = rigid_modes_spanning(model);
    if r.ncols() < 6 {
        return Err(Error::RankDeficient(format!(
            "node geometry supports only {} independent rigid modes (need 3 non-collinear nodes)",
            r.ncols()
        )));
    }
    Ok(r)
}

/// Mass-normalized modal basis: geometric rigid modes followed by the
/// `n_flex` lowest flexible modes of `K φ = ω² M φ`.
///
/// The generalized problem is reduced with the Cholesky factor of `M` to a
/// standard symmetric one; flexible vectors are re-orthogonalized against
/// the rigid block.
pub fn compute_modes(model: &StructuralModel, n_flex: usize) -> Result<ModalBasis> {
    let n = model.n_dofs();
    let m = model.mass_matrix();
    let rigid = rigid_modes_spanning(model);
    let n_rigid = rigid.ncols();
    if n_rigid + n_flex > n {
        return Err(Error::Dimension {
            what: "flexible modes available",
            expected: n_flex,
            found: n - n_rigid,
        });
    }

    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::InvalidModel("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    // C = L⁻¹ K L⁻ᵀ
    let lk = l
        .solve_lower_triangular(model.stiffness_matrix())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&lk.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let c = symmetrize(&c);
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let lt = l.transpose();
    let candidates = order.iter().skip(n_rigid).take(n_flex).map(|&k| {
        let y = eig.eigenvectors.column(k).into_owned();
        lt.solve_upper_triangular(&y).expect("triangular factor is nonsingular")
    });
    let rigid_cols: Vec<DVector<f64>> = rigid.column_iter().map(|c| c.into_owned()).collect();
    let mut flex = mass_gram_schmidt(m, &rigid_cols, candidates, 1e-6);
    if flex.len() < n_flex {
        return Err(Error::RankDeficient(
            "flexible eigenvectors collapsed onto the rigid subspace".into(),
        ));
    }

    let k = model.stiffness_matrix();
    let mut freqs = vec![0.0; n_rigid];
    for v in flex.iter_mut() {
        // deterministic sign: largest-magnitude entry positive
        let imax = v.iamax();
        if v[imax] < 0.0 {
            *v *= -1.0;
        }
        let lambda = v.dot(&(k * &*v)).max(0.0);
        freqs.push(lambda.sqrt() / (2.0 * PI));
    }
    if let Some(&f_max) = freqs.last() {
        let zero_flex = freqs[n_rigid..]
            .iter()
            .filter(|&&f| f < ZERO_FREQUENCY_RATIO * f_max)
            .count();
        if zero_flex > 0 {
            return Err(Error::RankDeficient(format!(
                "{zero_flex} zero-frequency modes beyond the {n_rigid} rigid modes"
            )));
        }
    }

    let mut cols = rigid_cols;
    cols.extend(flex);
    let shapes = if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    ModalBasis::new(model, shapes, n_rigid, freqs)
}

/// Reduced modal matrices and the state-space operator
/// `H = [0 I; −M_q⁻¹K_q −M_q⁻¹C_q]`.
#[derive(Debug, Clone)]
pub struct ModalSystem {
    basis: ModalBasis,
    modal_mass: DMatrix<f64>,
    modal_stiffness: DMatrix<f64>,
    modal_damping: DMatrix<f64>,
    modal_mass_inv: DMatrix<f64>,
    state_matrix: DMatrix<f64>,
    /// `M_q⁻¹ Ψᵀ M_x`
    projector: DMatrix<f64>,
}

/// Assembles `[0 I; −M⁻¹K −M⁻¹C]`.
pub fn assemble_state_matrix(
    mq_inv: &DMatrix<f64>,
    kq: &DMatrix<f64>,
    cq: &DMatrix<f64>,
) -> DMatrix<f64> {
    let m = kq.nrows();
    let mut h = DMatrix::zeros(2 * m, 2 * m);
    h.view_mut((0, m), (m, m)).fill_with_identity();
    h.view_mut((m, 0), (m, m)).copy_from(&(-(mq_inv * kq)));
    h.view_mut((m, m), (m, m)).copy_from(&(-(mq_inv * cq)));
    h
}

/// Builds the modal system. `damping_ratios` holds one ratio per mode, or a
/// single ratio applied to every mode; it is ignored when the model carries
/// its own damping matrix.
pub fn build_modal_system(
    model: &StructuralModel,
    basis: &ModalBasis,
    damping_ratios: &[f64],
) -> Result<ModalSystem> {
    if basis.n_dofs() != model.n_dofs() {
        return Err(Error::Dimension {
            what: "basis rows",
            expected: model.n_dofs(),
            found: basis.n_dofs(),
        });
    }
    let m = basis.n_modes();
    let zetas: Vec<f64> = match damping_ratios.len() {
        1 => vec![damping_ratios[0]; m],
        l if l == m => damping_ratios.to_vec(),
        l => {
            return Err(Error::Dimension {
                what: "damping ratios",
                expected: m,
                found: l,
            })
        }
    };
    if let Some(z) = zetas.iter().find(|z| !(**z >= 0.0)) {
        return Err(Error::config("damping_ratios", format!("ratio {z} must be >= 0")));
    }

    let psi = basis.shapes();
    let psi_t = psi.transpose();
    let mq = symmetrize(&(&psi_t * model.mass_matrix() * psi));
    let kq = symmetrize(&(&psi_t * model.stiffness_matrix() * psi));
    let cq = match model.damping_matrix() {
        Some(cx) => symmetrize(&(&psi_t * cx * psi)),
        None => DMatrix::from_diagonal(&DVector::from_iterator(
            m,
            zetas
                .iter()
                .zip(basis.frequencies())
                .map(|(z, f)| 2.0 * z * 2.0 * PI * f),
        )),
    };
    let mq_inv = Cholesky::new(mq.clone())
        .ok_or_else(|| Error::Numerical("modal mass matrix is singular".into()))?
        .inverse();
    let state_matrix = assemble_state_matrix(&mq_inv, &kq, &cq);
    let projector = &mq_inv * &psi_t * model.mass_matrix();
    Ok(ModalSystem {
        basis: basis.clone(),
        modal_mass: mq,
        modal_stiffness: kq,
        modal_damping: cq,
        modal_mass_inv: mq_inv,
        state_matrix,
        projector,
    })
}

impl ModalSystem {
    pub fn basis(&self) -> &ModalBasis {
        &self.basis
    }

    pub fn modal_mass(&self) -> &DMatrix<f64> {
        &self.modal_mass
    }

    pub fn modal_stiffness(&self) -> &DMatrix<f64> {
        &self.modal_stiffness
    }

    pub fn modal_damping(&self) -> &DMatrix<f64> {
        &self.modal_damping
    }

    pub fn modal_mass_inv(&self) -> &DMatrix<f64> {
        &self.modal_mass_inv
    }

    pub fn state_matrix(&self) -> &DMatrix<f64> {
        &self.state_matrix
    }

    pub fn n_modes(&self) -> usize {
        self.basis.n_modes()
    }

    /// Mass-weighted projection `M_q⁻¹ Ψᵀ M_x v`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.projector * v
    }
}

/// Modal state `η = [q; q̇]`, stored packed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalState {
    packed: DVector<f64>,
}

impl ModalState {
    pub fn zeros(n_modes: usize) -> Self {
        ModalState {
            packed: DVector::zeros(2 * n_modes),
        }
    }

    pub fn from_parts(coords: &DVector<f64>, rates: &DVector<f64>) -> Result<Self> {
        if coords.len() != rates.len() {
            return Err(Error::Dimension {
                what: "modal rates",
                expected: coords.len(),
                found: rates.len(),
            });
        }
        let m = coords.len();
        let mut packed = DVector::zeros(2 * m);
        packed.rows_mut(0, m).copy_from(coords);
        packed.rows_mut(m, m).copy_from(rates);
        Ok(ModalState { packed })
    }

    pub fn from_packed(packed: DVector<f64>) -> Result<Self> {
        if packed.len() % 2 != 0 {
            return Err(Error::Dimension {
                what: "packed modal state",
                expected: packed.len() + 1,
                found: packed.len(),
            });
        }
        Ok(ModalState { packed })
    }

    pub fn n_modes(&self) -> usize {
        self.packed.len() / 2
    }

    pub fn coords(&self) -> DVectorView<'_, f64, nalgebra::U1, Dyn> {
        self.packed.rows(0, self.n_modes())
    }

    pub fn rates(&self) -> DVectorView<'_, f64, nalgebra::U1, Dyn> {
        let m = self.n_modes();
        self.packed.rows(m, m)
    }

    pub fn packed(&self) -> &DVector<f64> {
        &self.packed
    }
}

/// `x = Ψq`, `ẋ = Ψq̇`.
pub fn modal_expand(basis: &ModalBasis, state: &ModalState) -> Result<(DVector<f64>, DVector<f64>)> {
    if state.n_modes() != basis.n_modes() {
        return Err(Error::Dimension {
            what: "modal state",
            expected: basis.n_modes(),
            found: state.n_modes(),
        });
    }
    Ok((basis.shapes() * state.coords(), basis.shapes() * state.rates()))
}

/// `q = M_q⁻¹ΨᵀM_x x`, `q̇ = M_q⁻¹ΨᵀM_x ẋ`. Exact inverse of
/// [`modal_expand`] on the span of the basis, mass-weighted projection
/// elsewhere.
pub fn inverse_modal_expand(
    system: &ModalSystem,
    x: &DVector<f64>,
    x_dot: &DVector<f64>,
) -> Result<ModalState> {
    let n = system.basis.n_dofs();
    for v in [x, x_dot] {
        if v.len() != n {
            return Err(Error::Dimension {
                what: "physical state",
                expected: n,
                found: v.len(),
            });
        }
    }
    ModalState::from_parts(&system.project(x), &system.project(x_dot))
}

/// `f_q = Ψᵀ f_x`.
pub fn project_force(basis: &ModalBasis, f_x: &DVector<f64>) -> Result<DVector<f64>> {
    if f_x.len() != basis.n_dofs() {
        return Err(Error::Dimension {
            what: "force vector",
            expected: basis.n_dofs(),
            found: f_x.len(),
        });
    }
    Ok(basis.shapes().tr_mul(f_x))
}

/// `η̇ = Hη + [0; M_q⁻¹ f_q]`.
pub fn modal_state_derivative(
    system: &ModalSystem,
    eta: &DVector<f64>,
    f_q: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = system.n_modes();
    if eta.len() != 2 * m {
        return Err(Error::Dimension {
            what: "modal state",
            expected: 2 * m,
            found: eta.len(),
        });
    }
    if f_q.len() != m {
        return Err(Error::Dimension {
            what: "modal force",
            expected: m,
            found: f_q.len(),
        });
    }
    let mut d = &system.state_matrix * eta;
    let forcing = &system.modal_mass_inv * f_q;
    let mut acc = d.rows_mut(m, m);
    acc += forcing;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_mass() -> StructuralModel {
        StructuralModel::new(
            vec![Vector3::zeros()],
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 3),
            None,
        )
        .unwrap()
    }

    /// Two unit masses on X1 joined by an axial spring.
    fn two_mass(k: f64, m: f64) -> StructuralModel {
        let mut kx = DMatrix::zeros(6, 6);
        kx[(0, 0)] = k;
        kx[(3, 3)] = k;
        kx[(0, 3)] = -k;
        kx[(3, 0)] = -k;
        StructuralModel::new(
            vec![Vector3::zeros(), Vector3::new(100.0, 0.0, 0.0)],
            DMatrix::identity(6, 6) * m,
            kx,
            None,
        )
        .unwrap()
    }

    /// Three unit masses in a triangle with three axial springs.
    fn triangle() -> StructuralModel {
        let coords = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let mut k = DMatrix::zeros(9, 9);
        for (a, b, s) in [(0, 1, 10.0), (1, 2, 20.0), (0, 2, 30.0)] {
            let d: Vector3<f64> = (coords[b] - coords[a]).normalize();
            let blk = d * d.transpose() * s;
            for i in 0..3 {
                for j in 0..3 {
                    k[(3 * a + i, 3 * a + j)] += blk[(i, j)];
                    k[(3 * b + i, 3 * b + j)] += blk[(i, j)];
                    k[(3 * a + i, 3 * b + j)] -= blk[(i, j)];
                    k[(3 * b + i, 3 * a + j)] -= blk[(i, j)];
                }
            }
        }
        let mass = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0]));
        StructuralModel::new(coords, mass, k, None).unwrap()
    }

    #[test]
    fn point_mass_has_three_translation_modes() {
        let b = compute_modes(&point_mass(), 0).unwrap();
        assert_eq!(b.n_modes(), 3);
        assert_eq!(b.n_rigid(), 3);
        assert!(b.frequencies().iter().all(|&f| f == 0.0));
        assert!(rigid_modes_geometric(&point_mass()).is_err());
    }

    #[test]
    fn two_mass_oscillator_frequency() {
        let (k, m) = (1000.0, 1.0);
        let b = compute_modes(&two_mass(k, m), 1).unwrap();
        assert_eq!(b.n_rigid(), 5);
        let f = b.frequencies()[5];
        let expected = (2.0 * k / m).sqrt() / (2.0 * PI);
        assert!((f - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn too_many_flexible_modes_is_a_dimension_error() {
        assert!(matches!(
            compute_modes(&two_mass(1.0, 1.0), 2),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn basis_is_mass_orthonormal() {
        let model = triangle();
        let b = compute_modes(&model, 3).unwrap();
        let gram = b.shapes().transpose() * model.mass_matrix() * b.shapes();
        assert!((gram - DMatrix::identity(9, 9)).amax() < 1e-10);
        assert!(b.is_mass_normalized());
        let kq = b.shapes().transpose() * model.stiffness_matrix() * b.shapes();
        for i in 0..9 {
            for j in 0..9 {
                if i != j {
                    assert!(kq[(i, j)].abs() < 1e-9 * kq.amax());
                }
            }
            let w = 2.0 * PI * b.frequencies()[i];
            assert!((kq[(i, i)] - w * w).abs() < 1e-9 * kq.amax());
        }
    }

    #[test]
    fn rotation_column_before_normalization() {
        let model = StructuralModel::new(
            vec![
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(-1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, -1.0, 0.0),
            ],
            DMatrix::identity(12, 12),
            DMatrix::zeros(12, 12),
            None,
        )
        .unwrap();
        assert!(model.center_of_mass().norm() < 1e-15);
        let cands = rigid_candidates(&model);
        assert_eq!(cands[5].rows(0, 3).into_owned(), DVector::from_vec(vec![0.0, 1.0, 0.0]));
        let r = rigid_modes_geometric(&model).unwrap();
        let gram = r.transpose() * model.mass_matrix() * &r;
        assert!((gram - DMatrix::identity(6, 6)).amax() < 1e-10);
        // translation columns are uniform
        for d in 0..3 {
            let c = r.column(d);
            for i in 0..4 {
                assert_eq!(c.rows(3 * i, 3), c.rows(0, 3));
            }
        }
    }

    #[test]
    fn collinear_nodes_are_rank_deficient() {
        let model = two_mass(1.0, 1.0);
        assert!(matches!(rigid_modes_geometric(&model), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn modal_damping_from_ratio() {
        let model = triangle();
        let b = compute_modes(&model, 3).unwrap();
        let sys = build_modal_system(&model, &b, &[0.05]).unwrap();
        assert!((sys.modal_mass() - DMatrix::identity(9, 9)).amax() < 1e-10);
        for i in 0..6 {
            assert_eq!(sys.modal_damping()[(i, i)], 0.0);
            assert!(sys.modal_stiffness().row(i).amax() < 1e-8);
        }
        let f = b.frequencies()[6];
        assert!((sys.modal_damping()[(6, 6)] - 0.2 * PI * f).abs() < 1e-12 * f);
    }

    #[test]
    fn published_first_mode_damping_value() {
        // 2 · 0.05 · 2π · 24.5282 Hz
        let c = 2.0 * 0.05 * 2.0 * PI * 24.5282;
        assert!((c - 15.412).abs() < 5e-4);
    }

    #[test]
    fn state_matrix_reconstructs_from_blocks() {
        let model = triangle();
        let b = compute_modes(&model, 3).unwrap();
        let sys = build_modal_system(&model, &b, &[0.02, 0.0, 0.0, 0.0, 0.0, 0.0, 0.05, 0.1, 0.2]).unwrap();
        let h = assemble_state_matrix(sys.modal_mass_inv(), sys.modal_stiffness(), sys.modal_damping());
        assert!((h - sys.state_matrix()).amax() < 1e-12);
    }

    #[test]
    fn damping_ratio_count_checked() {
        let model = triangle();
        let b = compute_modes(&model, 3).unwrap();
        assert!(build_modal_system(&model, &b, &[0.1, 0.2]).is_err());
        assert!(build_modal_system(&model, &b, &[-0.1]).is_err());
    }

    #[test]
    fn expansion_round_trip_and_column_selection() {
        let model = triangle();
        let b = compute_modes(&model, 3).unwrap();
        let sys = build_modal_system(&model, &b, &[0.0]).unwrap();
        let zero = ModalState::zeros(9);
        let (x, _) = modal_expand(&b, &zero).unwrap();
        assert_eq!(x, DVector::zeros(9));

        let mut e = DVector::zeros(9);
        e[4] = 1.0;
        let s = ModalState::from_parts(&e, &DVector::zeros(9)).unwrap();
        let (x, _) = modal_expand(&b, &s).unwrap();
        assert_eq!(x, b.shapes().column(4).into_owned());

        let q = DVector::from_fn(9, |i, _| (i as f64 * 0.37).sin());
        let qd = DVector::from_fn(9, |i, _| (i as f64 * 0.91).cos());
        let s = ModalState::from_parts(&q, &qd).unwrap();
        let (x, xd) = modal_expand(&b, &s).unwrap();
        let back = inverse_modal_expand(&sys, &x, &xd).unwrap();
        assert!((back.packed() - s.packed()).amax() < 1e-10);
    }

    #[test]
    fn projection_of_mass_orthogonal_complement() {
        // Truncated basis leaves room for an M-orthogonal complement.
        let model = triangle();
        let b = compute_modes(&model, 1).unwrap();
        let sys = build_modal_system(&model, &b, &[0.0]).unwrap();
        let full = compute_modes(&model, 3).unwrap();
        let v = full.shapes().column(8).into_owned();
        let q = inverse_modal_expand(&sys, &v, &v).unwrap();
        assert!(q.packed().amax() < 1e-10);
        let x = b.shapes().column(0) + &v;
        let q = inverse_modal_expand(&sys, &x, &DVector::zeros(9)).unwrap();
        let mut e1 = DVector::zeros(7);
        e1[0] = 1.0;
        assert!((q.coords() - e1).amax() < 1e-10);
    }

    #[test]
    fn force_projection() {
        let model = triangle();
        let b = compute_modes(&model, 3).unwrap();
        assert_eq!(project_force(&b, &DVector::zeros(9)).unwrap(), DVector::zeros(9));
        let mut f = DVector::zeros(9);
        f[5] = 7.0; // node 1, X3
        let fq = project_force(&b, &f).unwrap();
        let m_tot: f64 = 6.0;
        assert!((fq[2] - 7.0 / m_tot.sqrt()).abs() < 1e-12);
        assert!(project_force(&b, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn state_derivative_cases() {
        let model = two_mass(2.0, 1.0);
        let b = compute_modes(&model, 1).unwrap();
        // keep only the flexible mode: K_q = 2k/m = 4
        let shapes = b.shapes().columns(5, 1).into_owned();
        let single = ModalBasis::new(&model, shapes, 0, vec![b.frequencies()[5]]).unwrap();
        let sys = build_modal_system(&model, &single, &[0.0]).unwrap();
        let d = modal_state_derivative(&sys, &DVector::from_vec(vec![1.0, 0.0]), &DVector::zeros(1)).unwrap();
        assert!((d - DVector::from_vec(vec![0.0, -4.0])).amax() < 1e-12);
        let d = modal_state_derivative(&sys, &DVector::zeros(2), &DVector::from_vec(vec![3.0])).unwrap();
        assert!((d - DVector::from_vec(vec![0.0, 3.0])).amax() < 1e-12);

        let zeta = 0.05;
        let w = 2.0 * PI * 24.5282;
        let (k, m) = (w * w / 2.0, 1.0);
        let model = two_mass(k, m);
        let b = compute_modes(&model, 1).unwrap();
        let shapes = b.shapes().columns(5, 1).into_owned();
        let single = ModalBasis::new(&model, shapes, 0, vec![b.frequencies()[5]]).unwrap();
        let sys = build_modal_system(&model, &single, &[zeta]).unwrap();
        let d = modal_state_derivative(&sys, &DVector::from_vec(vec![0.0, 1.0]), &DVector::zeros(1)).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
        assert!((d[1] + 2.0 * zeta * w).abs() < 1e-9 * w);
    }

    #[test]
    fn rejects_bad_models() {
        let coords = vec![Vector3::zeros()];
        let mut k = DMatrix::zeros(3, 3);
        k[(0, 1)] = 1.0;
        assert!(matches!(
            StructuralModel::new(coords.clone(), DMatrix::identity(3, 3), k, None),
            Err(Error::Asymmetric { row: 0, col: 1, .. })
        ));
        assert!(StructuralModel::new(coords.clone(), -DMatrix::identity(3, 3), DMatrix::zeros(3, 3), None).is_err());
        assert!(StructuralModel::new(coords, DMatrix::identity(6, 6), DMatrix::zeros(6, 6), None).is_err());
    }
}
