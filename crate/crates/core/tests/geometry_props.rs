use hmor_core::depth::{equivalent_depth, normalize_depth, recover_absolute_depth};
use hmor_core::geometry::{project_to_plane, Camera, Vec3, ViewVector};
use hmor_core::hmor::{err_part, relation_part, RelationLabel};
use proptest::prelude::*;

fn camera() -> impl Strategy<Value = Camera> {
    (
        200.0..3000.0f64,
        200.0..3000.0f64,
        0.0..2000.0f64,
        0.0..2000.0f64,
    )
        .prop_map(|(fx, fy, cx, cy)| Camera::new(fx, fy, cx, cy).unwrap())
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn view() -> impl Strategy<Value = ViewVector> {
    (0.0..std::f64::consts::TAU, 0.0..=1.0f64)
        .prop_map(|(t, u)| ViewVector::from_spherical(t, u).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn projection_inverts_back_projection(cam in camera(), u in -500.0..2500.0f64, v in -500.0..2500.0f64, z in 100.0..20000.0f64) {
        let p = cam.back_project(u, v, z).unwrap();
        let (u2, v2) = cam.project(&p).unwrap();
        prop_assert!((u2 - u).abs() <= 1e-9 * u.abs().max(1.0));
        prop_assert!((v2 - v).abs() <= 1e-9 * v.abs().max(1.0));
        prop_assert!((p.z - z).abs() <= 1e-12 * z);
    }

    #[test]
    fn depth_recovery_inverts_normalization(
        cam in camera(),
        z in 500.0..20000.0f64,
        a_box in 100.0..1e6f64,
        a_roi in 100.0..1e6f64,
    ) {
        let z_eq = equivalent_depth(normalize_depth(z, &cam).unwrap(), a_box, a_roi).unwrap();
        let back = recover_absolute_depth(0.0, z_eq, &cam, a_box, a_roi).unwrap();
        prop_assert!((back - z).abs() / z < 1e-9);
    }

    #[test]
    fn sampled_views_are_unit_and_face_forward(t in 0.0..std::f64::consts::TAU, u in 0.0..=1.0f64) {
        let n = ViewVector::from_spherical(t, u).unwrap();
        prop_assert!((n.direction().norm() - 1.0).abs() < 1e-12);
        prop_assert!(n.direction().z >= 0.0);
    }

    #[test]
    fn plane_projection_is_orthogonal_and_idempotent(v in vec3(10.0), n in view()) {
        let p = project_to_plane(&v, n.direction());
        prop_assert!(p.dot(n.direction()).abs() < 1e-12 * v.norm().max(1.0));
        let pp = project_to_plane(&p, n.direction());
        prop_assert!((pp - p).norm() < 1e-12 * v.norm().max(1.0));
    }

    #[test]
    fn part_error_ignores_out_of_plane_components(t1 in vec3(2.0), t2 in vec3(2.0), n in view(), positive in any::<bool>()) {
        let label = if positive { RelationLabel::Positive } else { RelationLabel::Negative };
        let raw = err_part(&t1, &t2, label, &n);
        let flat = err_part(&project_to_plane(&t1, n.direction()), &project_to_plane(&t2, n.direction()), label, &n);
        prop_assert!((raw - flat).abs() < 1e-9);
    }

    #[test]
    fn swapping_parts_negates_the_part_label(t1 in vec3(2.0), t2 in vec3(2.0), n in view()) {
        prop_assert_eq!(relation_part(&t1, &t2, &n, 0.0), relation_part(&t2, &t1, &n, 0.0).negated());
    }
}
