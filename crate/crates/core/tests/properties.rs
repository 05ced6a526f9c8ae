use flexframe::factory::{make_lumped_grid, make_point_set, mass_properties, GridRecipe, PointMass, PointSetRecipe};
use flexframe::model::{build_modal_system, compute_modes, StructuralModel};
use flexframe::rotation::{hat, rotation_exp, rotation_log, LogRotation};
use flexframe::synthesis::transform_state;
use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-range..range).prop_map(Vector3::from)
}

fn grid() -> impl Strategy<Value = GridRecipe> {
    (
        prop::array::uniform3(2usize..4),
        prop::array::uniform3(20.0..400.0),
        1e-4..1e-2,
        1e5..1e7,
        0.1..1.0,
        prop::option::of((0usize..8, 1e-4..5e-3)),
    )
        .prop_map(|(counts, lengths, mass, ea, diag, extra)| GridRecipe {
            counts,
            lengths,
            origin: [0.0; 3],
            mass,
            edge_rigidity: ea,
            diagonal_rigidity: diag * ea,
            point_masses: extra.map(|(node, mass)| PointMass { node, mass }).into_iter().collect(),
        })
}

/// Generalized eigenvalues of `(K, M)` by Cholesky reduction, in Hz.
fn reference_frequencies(model: &StructuralModel) -> Vec<f64> {
    let l = Cholesky::new(model.mass_matrix().clone()).unwrap().l();
    let l_inv = l.clone().try_inverse().unwrap();
    let a = &l_inv * model.stiffness_matrix() * l_inv.transpose();
    let mut ev: Vec<f64> = SymmetricEigen::new((&a + a.transpose()) * 0.5).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev.iter().map(|l| l.max(0.0).sqrt() / (2.0 * std::f64::consts::PI)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mass_properties_match_direct_sums(
        points in prop::collection::vec((vec3(300.0), 1e-4..1e-2), 1..8),
    ) {
        let recipe = PointSetRecipe {
            nodes: points.iter().map(|(p, _)| [p.x, p.y, p.z]).collect(),
            masses: points.iter().map(|(_, m)| *m).collect(),
            springs: Vec::new(),
            free_free: false,
        };
        let model = make_point_set(&recipe).unwrap();
        let mp = mass_properties(&model);

        let total: f64 = points.iter().map(|(_, m)| m).sum();
        let mut first = Vector3::zeros();
        for (p, m) in &points {
            first += p * *m;
        }
        let com = first / total;
        // I = Σ m (|ρ|² 1 − ρρᵀ), entry by entry.
        let mut inertia = Matrix3::zeros();
        for (p, m) in &points {
            let d = p - com;
            for i in 0..3 {
                for j in 0..3 {
                    let delta = if i == j { d.norm_squared() } else { 0.0 };
                    inertia[(i, j)] += m * (delta - d[i] * d[j]);
                }
            }
        }
        prop_assert!((mp.total_mass - total).abs() <= 1e-14 * total);
        prop_assert!((mp.com - com).norm() <= 1e-10 * (1.0 + com.norm()));
        prop_assert!((mp.inertia - inertia).norm() <= 1e-10 * (1.0 + inertia.norm()));
    }

    #[test]
    fn nodal_rotation_is_an_isometry(axis in vec3(3.0), n in 1usize..20, seed in vec3(50.0)) {
        let r = rotation_exp(&LogRotation::from_vector(&axis));
        let x = DVector::from_fn(3 * n, |i, _| seed[i % 3] * (1.0 + i as f64).sin());
        let v = DVector::from_fn(3 * n, |i, _| seed[(i + 1) % 3] * (2.0 + i as f64).cos());
        let (xr, vr) = transform_state(&r, &x, &v);
        for k in 0..n {
            let a = x.fixed_rows::<3>(3 * k);
            let b = xr.fixed_rows::<3>(3 * k);
            prop_assert!((a.norm() - b.norm()).abs() <= 1e-12 * (1.0 + a.norm()));
        }
        let (xb, vb) = transform_state(&r.transpose(), &xr, &vr);
        prop_assert!((xb - &x).amax() <= 1e-12 * (1.0 + x.amax()));
        prop_assert!((vb - &v).amax() <= 1e-12 * (1.0 + v.amax()));
    }

    #[test]
    fn log_inverts_exp(v in vec3(1.0), scale in 0.0..3.1f64) {
        let rv = if v.norm() > 1e-9 { v.normalize() * scale } else { Vector3::zeros() };
        let a = rotation_exp(&LogRotation::from_vector(&rv));
        let back = rotation_log(&a);
        prop_assert!((rotation_exp(&back) - a).amax() < 1e-12);
        prop_assert!((a * a.transpose() - Matrix3::identity()).amax() < 1e-13);
        prop_assert!((a.determinant() - 1.0).abs() < 1e-13);
        // Exponential of a skew matrix commutes with its argument.
        prop_assert!((a * hat(&rv) - hat(&rv) * a).amax() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn modal_basis_invariants(recipe in grid()) {
        let model = make_lumped_grid(&recipe).unwrap();
        let n_flex = 4;
        let basis = compute_modes(&model, n_flex).unwrap();
        let m = model.mass_matrix();
        let k = model.stiffness_matrix();
        let psi = basis.shapes();
        let n = basis.n_modes();

        prop_assert_eq!(basis.n_rigid(), 6);
        let gram = psi.transpose() * m * psi;
        prop_assert!((gram - DMatrix::<f64>::identity(n, n)).amax() < 1e-9);

        // Rigid shapes carry no strain energy.
        let kr = k * basis.rigid_shapes();
        prop_assert!(kr.amax() < 1e-8 * k.amax());

        // Congruence Ψᵀ K Ψ is diagonal with (2πf)² entries.
        let kq = psi.transpose() * k * psi;
        let f_ref = reference_frequencies(&model);
        for i in 0..n {
            let w = 2.0 * std::f64::consts::PI * basis.frequencies()[i];
            prop_assert!((kq[(i, i)] - w * w).abs() <= 1e-8 * kq.amax().max(1.0));
            if !basis.is_rigid(i) {
                let rel = (basis.frequencies()[i] - f_ref[i]).abs() / f_ref[i];
                prop_assert!(rel < 1e-8, "mode {} {} vs {}", i, basis.frequencies()[i], f_ref[i]);
            }
        }

        // Projection onto the basis is idempotent.
        let system = build_modal_system(&model, &basis, &[0.03]).unwrap();
        let q = DVector::from_fn(n, |i, _| 1.0 / (1.0 + i as f64));
        let x = psi * &q;
        let q_back = system.project(&x);
        prop_assert!((&q_back - &q).amax() < 1e-9);
        let q_twice = system.project(&(psi * &q_back));
        prop_assert!((q_twice - q_back).amax() < 1e-9);
    }

    #[test]
    fn translation_leaves_dynamics_unchanged(recipe in grid(), shift in vec3(1000.0)) {
        let a = make_lumped_grid(&recipe).unwrap();
        let moved = GridRecipe { origin: [shift.x, shift.y, shift.z], ..recipe };
        let b = make_lumped_grid(&moved).unwrap();
        let (pa, pb) = (mass_properties(&a), mass_properties(&b));
        prop_assert!((pb.com - pa.com - shift).norm() < 1e-9 * (1.0 + shift.norm()));
        prop_assert!((pb.inertia - pa.inertia).norm() < 1e-8 * pa.inertia.norm());
        let fa = compute_modes(&a, 3).unwrap();
        let fb = compute_modes(&b, 3).unwrap();
        for i in 6..9 {
            let rel = (fa.frequencies()[i] - fb.frequencies()[i]).abs() / fa.frequencies()[i];
            prop_assert!(rel < 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn model_files_round_trip(recipe in grid(), with_modes in any::<bool>()) {
        use flexframe::modelfile::{load_model, save_model};

        let model = make_lumped_grid(&recipe).unwrap();
        let basis = if with_modes { Some(compute_modes(&model, 3).unwrap()) } else { None };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.toml");
        save_model(&path, &model, basis.as_ref(), "grid").unwrap();
        let back = load_model(&path).unwrap();
        prop_assert_eq!(back.name.as_str(), "grid");
        prop_assert_eq!(back.model.node_coords(), model.node_coords());
        prop_assert_eq!(back.model.mass_matrix(), model.mass_matrix());
        prop_assert_eq!(back.model.stiffness_matrix(), model.stiffness_matrix());
        prop_assert!(!back.modes_recomputed);
        match (&basis, &back.basis) {
            (Some(a), Some(b)) => {
                prop_assert_eq!(a.n_rigid(), b.n_rigid());
                prop_assert_eq!(a.frequencies(), b.frequencies());
                prop_assert!((a.shapes() - b.shapes()).amax() < 1e-12);
            }
            (None, None) => {}
            _ => prop_assert!(false, "basis presence changed"),
        }
    }
}
