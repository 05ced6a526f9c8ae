//! Lumped-mass truss models: point sets, triangles, grids and the plate
//! surrogate preset.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StructuralModel;
use crate::rigid::RigidBodyProps;

/// Relative eigenvalue threshold used to count stiffness null vectors.
pub const NULL_SPACE_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    /// N/mm
    pub stiffness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub node: usize,
    /// Mg
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSetRecipe {
    pub nodes: Vec<[f64; 3]>,
    pub masses: Vec<f64>,
    pub springs: Vec<Spring>,
    /// Require a six-dimensional stiffness null space.
    #[serde(default = "default_true")]
    pub free_free: bool,
}

fn default_true() -> bool {
    true
}

/// Three masses on an equilateral triangle in the X1–X2 plane joined by
/// three springs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumbbellRecipe {
    /// mm
    pub side: f64,
    pub masses: [f64; 3],
    /// N/mm
    pub stiffness: f64,
}

/// `counts[0] × counts[1] × counts[2]` nodes on a box starting at `origin`,
/// joined by edge springs and both face diagonals of every cell face.
/// Node `(i, j, k)` has index `i + n1·(j + n2·k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecipe {
    pub counts: [usize; 3],
    /// mm
    pub lengths: [f64; 3],
    /// mm
    #[serde(default)]
    pub origin: [f64; 3],
    /// Distributed mass (Mg), lumped by tributary weights.
    pub mass: f64,
    /// Axial rigidity EA of edge springs (N); spring stiffness is EA/L.
    pub edge_rigidity: f64,
    /// Axial rigidity of diagonal springs (N).
    pub diagonal_rigidity: f64,
    #[serde(default)]
    pub point_masses: Vec<PointMass>,
}

/// Two masses joined by one spring along X1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxialPairRecipe {
    pub length: f64,
    pub mass: f64,
    pub stiffness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FactoryRecipe {
    PointSet(PointSetRecipe),
    Dumbbell(DumbbellRecipe),
    LumpedGrid(GridRecipe),
    AxialPair(AxialPairRecipe),
    PlateSurrogate,
}

/// Total mass, center of mass and inertia tensor about the center of mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassProperties {
    pub total_mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive, got {v}")))
    }
}

/// Adds `k·d̂d̂ᵀ` couplings between nodes `a` and `b`.
fn add_spring(k: &mut DMatrix<f64>, coords: &[Vector3<f64>], a: usize, b: usize, stiffness: f64) -> Result<()> {
    let d = coords[b] - coords[a];
    let len = d.norm();
    if !(len > 0.0) {
        return Err(Error::config("springs", format!("nodes {a} and {b} coincide")));
    }
    let u = d / len;
    let blk = u * u.transpose() * stiffness;
    for (i, j, s) in [(a, a, 1.0), (b, b, 1.0), (a, b, -1.0), (b, a, -1.0)] {
        let mut v = k.view_mut((3 * i, 3 * j), (3, 3));
        v += blk * s;
    }
    Ok(())
}

fn assemble(
    coords: Vec<Vector3<f64>>,
    masses: &[f64],
    springs: &[Spring],
    free_free: bool,
) -> Result<StructuralModel> {
    let n = coords.len();
    if masses.len() != n {
        return Err(Error::Dimension {
            what: "nodal masses",
            expected: n,
            found: masses.len(),
        });
    }
    for (i, &m) in masses.iter().enumerate() {
        positive(&format!("masses[{i}]"), m)?;
    }
    let mut k = DMatrix::zeros(3 * n, 3 * n);
    for (i, s) in springs.iter().enumerate() {
        if s.a >= n || s.b >= n {
            return Err(Error::config(format!("springs[{i}]"), "node index out of range"));
        }
        positive(&format!("springs[{i}].stiffness"), s.stiffness)?;
        add_spring(&mut k, &coords, s.a, s.b, s.stiffness)?;
    }
    let mass = DMatrix::from_diagonal(&DVector::from_fn(3 * n, |i, _| masses[i / 3]));
    let model = StructuralModel::new(coords, mass, k, None)?;
    if free_free {
        let null = model.stiffness_null_dim(NULL_SPACE_TOL);
        if null != 6 {
            return Err(Error::RankDeficient(format!(
                "free-free stiffness has a {null}-dimensional null space (expected 6)"
            )));
        }
    }
    Ok(model)
}

pub fn make_point_set(r: &PointSetRecipe) -> Result<StructuralModel> {
    let coords = r.nodes.iter().map(|p| Vector3::from(*p)).collect();
    assemble(coords, &r.masses, &r.springs, r.free_free)
}

pub fn make_dumbbell(r: &DumbbellRecipe) -> Result<StructuralModel> {
    positive("side", r.side)?;
    positive("stiffness", r.stiffness)?;
    let h = r.side * 3f64.sqrt() / 2.0;
    let coords = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(r.side, 0.0, 0.0),
        Vector3::new(0.5 * r.side, h, 0.0),
    ];
    let springs = [(0, 1), (1, 2), (2, 0)].map(|(a, b)| Spring {
        a,
        b,
        stiffness: r.stiffness,
    });
    assemble(coords, &r.masses, &springs, true)
}

pub fn make_axial_pair(r: &AxialPairRecipe) -> Result<StructuralModel> {
    positive("length", r.length)?;
    positive("mass", r.mass)?;
    positive("stiffness", r.stiffness)?;
    let coords = vec![Vector3::zeros(), Vector3::new(r.length, 0.0, 0.0)];
    let springs = [Spring {
        a: 0,
        b: 1,
        stiffness: r.stiffness,
    }];
    assemble(coords, &[r.mass, r.mass], &springs, false)
}

impl GridRecipe {
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.counts[0] * (j + self.counts[1] * k)
    }

    pub fn n_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    /// Node indices of the eight box corners, bottom face first
    /// (counter-clockwise from the origin corner).
    pub fn corner_nodes(&self) -> [usize; 8] {
        let [a, b, c] = self.counts.map(|n| n - 1);
        [
            self.node_index(0, 0, 0),
            self.node_index(a, 0, 0),
            self.node_index(a, b, 0),
            self.node_index(0, b, 0),
            self.node_index(0, 0, c),
            self.node_index(a, 0, c),
            self.node_index(a, b, c),
            self.node_index(0, b, c),
        ]
    }

    fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + self.lengths[axis] * i as f64 / (self.counts[axis] - 1) as f64
    }
}

pub fn make_lumped_grid(r: &GridRecipe) -> Result<StructuralModel> {
    for (axis, &c) in r.counts.iter().enumerate() {
        if c < 2 {
            return Err(Error::config(format!("counts[{axis}]"), "need at least 2 nodes per axis"));
        }
        positive(&format!("lengths[{axis}]"), r.lengths[axis])?;
    }
    positive("mass", r.mass)?;
    positive("edge_rigidity", r.edge_rigidity)?;
    positive("diagonal_rigidity", r.diagonal_rigidity)?;
    let [n1, n2, n3] = r.counts;
    let mut coords = Vec::with_capacity(r.n_nodes());
    let mut weights = Vec::with_capacity(r.n_nodes());
    let w = |i: usize, n: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    for k in 0..n3 {
        for j in 0..n2 {
            for i in 0..n1 {
                coords.push(Vector3::new(r.coordinate(0, i), r.coordinate(1, j), r.coordinate(2, k)));
                weights.push(w(i, n1) * w(j, n2) * w(k, n3));
            }
        }
    }
    let wsum: f64 = weights.iter().sum();
    let mut masses: Vec<f64> = weights.iter().map(|w| r.mass * w / wsum).collect();
    for (i, pm) in r.point_masses.iter().enumerate() {
        if pm.node >= masses.len() {
            return Err(Error::config(format!("point_masses[{i}].node"), "node index out of range"));
        }
        positive(&format!("point_masses[{i}].mass"), pm.mass)?;
        masses[pm.node] += pm.mass;
    }

    let mut springs = Vec::new();
    let mut link = |a: usize, b: usize, ea: f64| {
        let len = (coords[b] - coords[a]).norm();
        springs.push(Spring {
            a,
            b,
            stiffness: ea / len,
        });
    };
    let idx = |i, j, k| r.node_index(i, j, k);
    for k in 0..n3 {
        for j in 0..n2 {
            for i in 0..n1 {
                let here = idx(i, j, k);
                if i + 1 < n1 {
                    link(here, idx(i + 1, j, k), r.edge_rigidity);
                }
                if j + 1 < n2 {
                    link(here, idx(i, j + 1, k), r.edge_rigidity);
                }
                if k + 1 < n3 {
                    link(here, idx(i, j, k + 1), r.edge_rigidity);
                }
                if i + 1 < n1 && j + 1 < n2 {
                    link(here, idx(i + 1, j + 1, k), r.diagonal_rigidity);
                    link(idx(i + 1, j, k), idx(i, j + 1, k), r.diagonal_rigidity);
                }
                if i + 1 < n1 && k + 1 < n3 {
                    link(here, idx(i + 1, j, k + 1), r.diagonal_rigidity);
                    link(idx(i + 1, j, k), idx(i, j, k + 1), r.diagonal_rigidity);
                }
                if j + 1 < n2 && k + 1 < n3 {
                    link(here, idx(i, j + 1, k + 1), r.diagonal_rigidity);
                    link(idx(i, j + 1, k), idx(i, j, k + 1), r.diagonal_rigidity);
                }
            }
        }
    }
    assemble(coords, &masses, &springs, true)
}

/// Plate surrogate: a 1000 × 50 × 10 mm plate of 0.0013 Mg lumped on an
/// 11 × 3 × 2 grid, with 0.001 Mg attached at each of the eight corners.
pub struct PlateSurrogate;

impl PlateSurrogate {
    pub const PLATE_MASS: f64 = 0.0013;
    pub const CORNER_MASS: f64 = 0.001;
    /// Edge axial rigidity (N).
    pub const EDGE_RIGIDITY: f64 = 2.0e6;
    /// Diagonal axial rigidity (N).
    pub const DIAGONAL_RIGIDITY: f64 = 1.0e6;
    pub const N_FLEX: usize = 10;

    pub fn recipe() -> GridRecipe {
        let mut r = GridRecipe {
            counts: [11, 3, 2],
            lengths: [1000.0, 50.0, 10.0],
            origin: [-500.0, -25.0, 0.0],
            mass: Self::PLATE_MASS,
            edge_rigidity: Self::EDGE_RIGIDITY,
            diagonal_rigidity: Self::DIAGONAL_RIGIDITY,
            point_masses: Vec::new(),
        };
        r.point_masses = r
            .corner_nodes()
            .iter()
            .map(|&node| PointMass {
                node,
                mass: Self::CORNER_MASS,
            })
            .collect();
        r
    }

    /// Reference, P and Q markers: the three bottom corners at
    /// (−500, −25, 0), (500, −25, 0) and (500, 25, 0).
    pub fn markers() -> [usize; 3] {
        let c = Self::recipe().corner_nodes();
        [c[0], c[1], c[2]]
    }

    /// Node at (−500, 0, 10), mid-width on the top face of one end.
    pub fn load_node() -> usize {
        Self::recipe().node_index(0, 1, 1)
    }

    pub fn corner_nodes() -> [usize; 8] {
        Self::recipe().corner_nodes()
    }
}

pub fn make_plate_surrogate() -> Result<StructuralModel> {
    make_lumped_grid(&PlateSurrogate::recipe())
}

impl FactoryRecipe {
    pub fn build(&self) -> Result<StructuralModel> {
        match self {
            FactoryRecipe::PointSet(r) => make_point_set(r),
            FactoryRecipe::Dumbbell(r) => make_dumbbell(r),
            FactoryRecipe::LumpedGrid(r) => make_lumped_grid(r),
            FactoryRecipe::AxialPair(r) => make_axial_pair(r),
            FactoryRecipe::PlateSurrogate => make_plate_surrogate(),
        }
    }

    /// Parses `name` or `name:key=value,...`. Grid keys: `n1 n2 n3 l1 l2 l3
    /// mass edge_rigidity diagonal_rigidity`; dumbbell keys: `side m1 m2 m3
    /// stiffness`; axial-pair keys: `length mass stiffness`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let mut params = BTreeMap::new();
        for kv in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::config("recipe", format!("expected key=value, got `{kv}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("recipe.{}", k.trim()), format!("`{v}` is not a number")))?;
            params.insert(k.trim().to_string(), v);
        }
        let mut take = |key: &str, default: f64| params.remove(key).unwrap_or(default);
        let recipe = match name.trim() {
            "plate-surrogate" => FactoryRecipe::PlateSurrogate,
            "dumbbell" => FactoryRecipe::Dumbbell(DumbbellRecipe {
                side: take("side", 100.0),
                masses: [take("m1", 0.001), take("m2", 0.002), take("m3", 0.003)],
                stiffness: take("stiffness", 1.0e5),
            }),
            "axial-pair" | "two-mass" => FactoryRecipe::AxialPair(AxialPairRecipe {
                length: take("length", 100.0),
                mass: take("mass", 0.001),
                stiffness: take("stiffness", 1.0e3),
            }),
            "lumped-grid" => {
                let count = |v: f64, key: &str| -> Result<usize> {
                    if v >= 2.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::config(format!("recipe.{key}"), "must be an integer >= 2"))
                    }
                };
                let n = [
                    count(take("n1", 5.0), "n1")?,
                    count(take("n2", 2.0), "n2")?,
                    count(take("n3", 2.0), "n3")?,
                ];
                FactoryRecipe::LumpedGrid(GridRecipe {
                    counts: n,
                    lengths: [take("l1", 400.0), take("l2", 50.0), take("l3", 10.0)],
                    origin: [0.0; 3],
                    mass: take("mass", 0.001),
                    edge_rigidity: take("edge_rigidity", 1.0e6),
                    diagonal_rigidity: take("diagonal_rigidity", 5.0e5),
                    point_masses: Vec::new(),
                })
            }
            other => return Err(Error::config("recipe", format!("unknown recipe `{other}`"))),
        };
        if let Some(k) = params.keys().next() {
            return Err(Error::config(format!("recipe.{k}"), "unknown parameter"));
        }
        Ok(recipe)
    }
}

/// Nodal masses from row lumping of the mass matrix.
pub fn nodal_masses(model: &StructuralModel) -> Vec<f64> {
    let m = model.mass_matrix();
    (0..model.n_nodes())
        .map(|i| (0..3).map(|d| m.row(3 * i + d).sum()).sum::<f64>() / 3.0)
        .collect()
}

pub fn mass_properties(model: &StructuralModel) -> MassProperties {
    let masses = nodal_masses(model);
    let coords = model.node_coords();
    let total: f64 = masses.iter().sum();
    let com = coords.iter().zip(&masses).map(|(r, m)| r * *m).sum::<Vector3<f64>>() / total;
    let mut inertia = Matrix3::zeros();
    for (r, m) in coords.iter().zip(&masses) {
        let rho = r - com;
        inertia += (Matrix3::identity() * rho.norm_squared() - rho * rho.transpose()) * *m;
    }
    MassProperties {
        total_mass: total,
        com,
        inertia,
    }
}

/// Rigid-body properties equivalent to `model`.
pub fn rigid_props(model: &StructuralModel) -> Result<RigidBodyProps> {
    let mp = mass_properties(model);
    RigidBodyProps::from_tensor(mp.total_mass, mp.com, &mp.inertia)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::compute_modes;
    use std::f64::consts::PI;

    #[test]
    fn axial_pair_frequency() {
        let model = make_axial_pair(&AxialPairRecipe {
            length: 10.0,
            mass: 0.002,
            stiffness: 500.0,
        })
        .unwrap();
        let basis = compute_modes(&model, 1).unwrap();
        let f = basis.frequencies()[basis.n_rigid()];
        let exact = (2.0 * 500.0 / 0.002f64).sqrt() / (2.0 * PI);
        assert!((f - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn single_and_pair_mass_properties() {
        let one = make_point_set(&PointSetRecipe {
            nodes: vec![[0.0; 3]],
            masses: vec![1.0],
            springs: vec![],
            free_free: false,
        })
        .unwrap();
        let mp = mass_properties(&one);
        assert_eq!(mp.total_mass, 1.0);
        assert_eq!(mp.com, Vector3::zeros());
        assert_eq!(mp.inertia, Matrix3::zeros());

        let two = make_point_set(&PointSetRecipe {
            nodes: vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            masses: vec![0.5, 0.5],
            springs: vec![],
            free_free: false,
        })
        .unwrap();
        assert_eq!(mass_properties(&two).inertia[(1, 1)], 1.0);
    }

    #[test]
    fn grid_is_free_free_with_zero_row_sums() {
        let r = GridRecipe {
            counts: [4, 2, 2],
            lengths: [300.0, 40.0, 20.0],
            origin: [0.0; 3],
            mass: 0.002,
            edge_rigidity: 1e6,
            diagonal_rigidity: 5e5,
            point_masses: vec![],
        };
        let model = make_lumped_grid(&r).unwrap();
        let k = model.stiffness_matrix();
        for d in 0..3 {
            let t = model.translation_field(d);
            assert!((k * t).amax() < 1e-9 * k.amax());
        }
        let mp = mass_properties(&model);
        assert!((mp.total_mass - 0.002).abs() < 1e-15);
    }

    #[test]
    fn flat_grid_is_a_mechanism() {
        let r = GridRecipe {
            counts: [3, 3, 1],
            lengths: [100.0, 100.0, 10.0],
            origin: [0.0; 3],
            mass: 1.0,
            edge_rigidity: 1.0,
            diagonal_rigidity: 1.0,
            point_masses: vec![],
        };
        assert!(make_lumped_grid(&r).is_err());
        let mech = PointSetRecipe {
            nodes: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]],
            masses: vec![1.0; 4],
            springs: vec![Spring { a: 0, b: 1, stiffness: 1.0 }, Spring { a: 1, b: 2, stiffness: 1.0 }],
            free_free: true,
        };
        assert!(matches!(make_point_set(&mech), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn plate_surrogate_layout() {
        assert_eq!(PlateSurrogate::markers(), [0, 10, 32]);
        assert_eq!(PlateSurrogate::load_node(), 44);
        let model = make_plate_surrogate().unwrap();
        assert_eq!(model.node(44).unwrap(), Vector3::new(-500.0, 0.0, 10.0));
        assert_eq!(model.node(32).unwrap(), Vector3::new(500.0, 25.0, 0.0));
    }

    #[test]
    fn recipe_strings() {
        assert_eq!(FactoryRecipe::parse("plate-surrogate").unwrap(), FactoryRecipe::PlateSurrogate);
        match FactoryRecipe::parse("axial-pair:mass=0.5,stiffness=2").unwrap() {
            FactoryRecipe::AxialPair(r) => {
                assert_eq!(r.mass, 0.5);
                assert_eq!(r.stiffness, 2.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(FactoryRecipe::parse("lumped-grid:n1=1").is_err());
        assert!(FactoryRecipe::parse("dumbbell:bogus=1").is_err());
        assert!(FactoryRecipe::parse("nope").is_err());
    }
}
