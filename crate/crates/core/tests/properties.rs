use cubepose::geometry::{
    cube_from_aabb, diameter, scale_cube, volume, AxisAngle, Pose, PointSet, Vec3,
};
use cubepose::losses::{riou, BevBox};
use cubepose::metrics::{
    add_error, add_s_error, add_s_error_brute, add_s_error_indexed, ChamferDirection,
};
use proptest::prelude::*;

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec3(-1.0, 1.0), 0.0..3.1f64, vec3(-500.0, 500.0)).prop_map(|(axis, angle, t)| {
        let axis = if axis.norm() < 1e-3 { Vec3::z() } else { axis };
        Pose::new(AxisAngle::new(axis, angle).to_rotation(), t)
    })
}

fn cloud(max: usize) -> impl Strategy<Value = PointSet> {
    prop::collection::vec(vec3(-100.0, 100.0), 1..max).prop_map(|v| PointSet::new(v).unwrap())
}

fn bev() -> impl Strategy<Value = BevBox> {
    (-5.0..5.0f64, -5.0..5.0f64, 0.1..6.0f64, 0.1..6.0f64, -4.0..4.0f64)
        .prop_map(|(cx, cy, l, w, r)| BevBox::new(cx, cy, l, w, r).unwrap())
}

fn direction() -> impl Strategy<Value = ChamferDirection> {
    prop_oneof![Just(ChamferDirection::PredToGt), Just(ChamferDirection::GtToPred)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn add_s_never_exceeds_add(pts in cloud(40), a in pose(), b in pose(), dir in direction()) {
        let add = add_error(&a, &b, &pts).unwrap();
        let adds = add_s_error(&a, &b, &pts, dir).unwrap();
        prop_assert!(adds <= add + 1e-9 * (1.0 + add));
    }

    #[test]
    fn riou_symmetric_and_bounded(g in bev(), p in bev()) {
        let a = riou(&g, &p);
        let b = riou(&p, &g);
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn add_is_left_invariant(pts in cloud(30), a in pose(), b in pose(), c in pose()) {
        let before = add_error(&a, &b, &pts).unwrap();
        let after = add_error(&c.compose(&a), &c.compose(&b), &pts).unwrap();
        prop_assert!((before - after).abs() < 1e-9 * (1.0 + before));
    }

    #[test]
    fn scaled_volume_identity(lo in vec3(-50.0, 0.0), size in vec3(1.0, 80.0), s in vec3(0.05, 4.0)) {
        let c = cube_from_aabb(&lo, &(lo + size)).unwrap();
        let scaled = scale_cube(&c, &s).unwrap();
        let expected = volume(&c) * s.x * s.y * s.z;
        prop_assert!((volume(&scaled) - expected).abs() <= 1e-9 * expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn diameter_is_rigid_invariant(pts in cloud(200), p in pose()) {
        let d = diameter(&pts).unwrap();
        let moved = PointSet::new(pts.points().iter().map(|x| p.transform(x)).collect()).unwrap();
        prop_assert!((diameter(&moved).unwrap() - d).abs() < 1e-9 * (1.0 + d));
    }
}

#[test]
fn indexed_add_s_matches_brute_force() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let random_pose = |rng: &mut rand_chacha::ChaCha8Rng| {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0);
        let t = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        Pose::new(AxisAngle::new(axis, rng.random_range(0.0..3.1)).to_rotation(), t)
    };
    for m in [8usize, 64, 1000, 4096] {
        let pts: Vec<Vec3> = (0..m)
            .map(|_| Vec3::new(rng.random_range(-80.0..80.0), rng.random_range(-50.0..50.0), rng.random_range(-30.0..30.0)))
            .collect();
        let pts = PointSet::new(pts).unwrap();
        for i in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let dir = if i % 2 == 0 { ChamferDirection::PredToGt } else { ChamferDirection::GtToPred };
            let brute = add_s_error_brute(&a, &b, &pts, dir).unwrap();
            let fast = add_s_error_indexed(&a, &b, &pts, dir).unwrap();
            assert!((brute - fast).abs() < 1e-9, "m={m}: {brute} vs {fast}");
        }
    }
}
