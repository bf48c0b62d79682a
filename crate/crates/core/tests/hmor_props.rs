use hmor_core::geometry::{Vec3, ViewVector};
use hmor_core::hmor::{
    count_violations, enumerate_pairs, err_instance, err_joint, err_part, hmor_loss,
    part_relations_from_2d, relation_instance, relation_part, HmorConfig, PairScope, RelationLabel,
};
use hmor_core::skeleton::SkeletonTopology;
use hmor_core::synth::{generate_scene, perturb_with, GenSpec, Perturbation};
use proptest::prelude::*;

fn spec(seed: u64, n: usize) -> GenSpec {
    GenSpec {
        seed,
        n_persons: n,
        ..GenSpec::default()
    }
}

fn view() -> impl Strategy<Value = ViewVector> {
    (0.0..std::f64::consts::TAU, 0.0..=1.0f64)
        .prop_map(|(t, u)| ViewVector::from_spherical(t, u).unwrap())
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

#[test]
fn pair_counts_for_default_skeleton() {
    let cfg = HmorConfig::default();
    let n = ViewVector::camera_axis();
    let one = enumerate_pairs(&generate_scene(&spec(1, 1)).unwrap(), &n, &cfg).unwrap();
    assert_eq!(
        (one.instance.len(), one.part.len(), one.joint.len()),
        (0, 91, 136)
    );
    let two = enumerate_pairs(&generate_scene(&spec(1, 2)).unwrap(), &n, &cfg).unwrap();
    assert_eq!(
        (two.instance.len(), two.part.len(), two.joint.len()),
        (1, 378, 561)
    );

    let intra = HmorConfig {
        pair_scope: PairScope::IntraPerson,
        ..HmorConfig::default()
    };
    let two = enumerate_pairs(&generate_scene(&spec(1, 2)).unwrap(), &n, &intra).unwrap();
    assert_eq!(
        (two.instance.len(), two.part.len(), two.joint.len()),
        (1, 182, 272)
    );
}

#[test]
fn pair_cap_limits_every_level() {
    let cfg = HmorConfig {
        pair_cap: Some(50),
        ..HmorConfig::default()
    };
    let p = enumerate_pairs(
        &generate_scene(&spec(3, 3)).unwrap(),
        &ViewVector::camera_axis(),
        &cfg,
    )
    .unwrap();
    assert_eq!((p.instance.len(), p.part.len(), p.joint.len()), (3, 50, 50));
}

#[test]
fn depth_swap_costs_log_of_one_plus_gap() {
    let gt = generate_scene(&spec(11, 2)).unwrap();
    let swapped = perturb_with(
        &gt,
        &Perturbation::DepthSwap {
            pairs: vec![(0, 1)],
        },
        0,
    )
    .unwrap();
    let cfg = HmorConfig::default();
    let n = gt.camera.normal_view();
    let pairs = enumerate_pairs(&gt, &n, &cfg).unwrap();

    // Instance positions are joint centroids; swapping human depths moves
    // each centroid along its own joints' rays, so compute the gap directly.
    let centroid = |s: &hmor_core::Scene, m: usize| -> Vec3 {
        let p = &s.absolute_poses().unwrap()[m];
        p.joints().iter().sum::<Vec3>() / p.len() as f64
    };
    let gap_m = (centroid(&swapped, 0) - centroid(&swapped, 1)).z * 1e-3;
    let label = pairs.instance[0].label;
    let expected = (label.value() * gap_m).max(0.0).ln_1p();
    assert!(expected > 0.0);
    let loss = hmor_loss(&swapped, &pairs, &cfg).unwrap();
    assert!(
        (loss.instance - expected).abs() < 1e-12,
        "{} vs {expected}",
        loss.instance
    );
    let v = count_violations(
        &swapped.absolute_poses().unwrap(),
        gt.topology(),
        &pairs,
        &cfg,
    )
    .unwrap();
    assert_eq!(v.instance, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ground_truth_has_zero_loss_under_any_view(seed in 0u64..10_000, n in 1usize..=4, v in view()) {
        let gt = generate_scene(&spec(seed, n)).unwrap();
        let cfg = HmorConfig::default();
        let pairs = enumerate_pairs(&gt, &v, &cfg).unwrap();
        let loss = hmor_loss(&gt, &pairs, &cfg).unwrap();
        prop_assert_eq!(loss.total, 0.0);
        let viol = count_violations(&gt.absolute_poses().unwrap(), gt.topology(), &pairs, &cfg).unwrap();
        prop_assert_eq!(viol.total(), 0);
    }

    #[test]
    fn generated_scenes_satisfy_invariants(seed in 0u64..10_000, n in 1usize..=4) {
        let gt = generate_scene(&spec(seed, n)).unwrap();
        prop_assert_eq!(gt.len(), n);
        for pose in gt.absolute_poses().unwrap() {
            prop_assert_eq!(pose.len(), 17);
            prop_assert!(pose.joints().iter().all(|j| j.z > 0.0));
        }
        for p in gt.persons() {
            prop_assert_eq!(p.rel_pose.joints()[0].z, 0.0);
            prop_assert!(p.bbox.area() > 0.0);
        }
    }

    #[test]
    fn pair_errors_are_non_negative_and_vanish_on_agreement(a in vec3(5.0), b in vec3(5.0), v in view()) {
        for label in [RelationLabel::Positive, RelationLabel::Negative, RelationLabel::Zero] {
            prop_assert!(err_instance(&a, &b, label, &v) >= 0.0);
            prop_assert!(err_joint(&a, &b, label, &v) >= 0.0);
            prop_assert!(err_part(&a, &b, label, &v) >= 0.0);
        }
        let own = relation_instance(&a, &b, &v, 0.0);
        prop_assert_eq!(err_instance(&a, &b, own, &v), 0.0);
        let own = relation_part(&a, &b, &v, 0.0);
        prop_assert_eq!(err_part(&a, &b, own, &v), 0.0);
    }

    #[test]
    fn labels_from_orthographic_keypoints_match_3d_labels(
        joints in proptest::collection::vec(proptest::collection::vec(vec3(900.0), 17), 1..=3),
        scales in proptest::collection::vec(0.05..2.0f64, 3),
    ) {
        let topo = SkeletonTopology::default();
        let keypoints: Vec<Vec<[f64; 2]>> = joints
            .iter()
            .zip(&scales)
            .map(|(js, s)| js.iter().map(|j| [s * j.x + 500.0, s * j.y + 500.0]).collect())
            .collect();
        let from_2d = part_relations_from_2d(&keypoints, &topo, PairScope::All, 0.0).unwrap();
        let axis = ViewVector::camera_axis();
        for pair in &from_2d {
            let (s1, e1) = topo.parts()[pair.first.part];
            let (s2, e2) = topo.parts()[pair.second.part];
            let t1 = joints[pair.first.person][e1] - joints[pair.first.person][s1];
            let t2 = joints[pair.second.person][e2] - joints[pair.second.person][s2];
            prop_assert_eq!(pair.label, relation_part(&t1, &t2, &axis, 0.0));
        }
    }
}
