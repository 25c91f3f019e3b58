//! Finite-difference check of every shipped problem at 10 random states.

use adakern_core::check_jacobian;
use adakern_core::problems::ba::{synthetic_ba_scene, BaSceneConfig};
use adakern_core::problems::{
    ba_problem, line_fit_problem, registration_problem, synthetic_line, synthetic_scan, PointCloud, RegistrationVariant,
    ScanConfig,
};
use adakern_core::Problem;
use nalgebra::{Isometry2, Isometry3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-5;
const STEP: f64 = 1e-6;

fn random_delta(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn check_all<P: Problem>(problem: &P, base: &P::State, rng: &mut ChaCha8Rng, scale: f64, name: &str) {
    for _ in 0..10 {
        let state = problem.plus(base, &random_delta(rng, problem.tangent_dim(), scale));
        let check = check_jacobian(problem, &state, STEP);
        assert!(check.max_error < TOLERANCE, "{name}: {check:?}");
    }
}

#[test]
fn line_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts = synthetic_line(&mut rng, 50, -1.0, 3.0, 0.3, (-4.0, 4.0)).unwrap();
    check_all(&line_fit_problem(&pts).unwrap(), &[0.0, 0.0], &mut rng, 5.0, "line");
}

#[test]
fn registration_3d() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let target = synthetic_scan(&mut rng, &ScanConfig { points: 100, noise: 0.01, ..ScanConfig::default() }).unwrap();
    let source = synthetic_scan(&mut rng, &ScanConfig { points: 100, ..ScanConfig::default() }).unwrap();
    let pairs: Vec<usize> = (0..100).map(|_| rng.random_range(0..100)).collect();
    for variant in [RegistrationVariant::PointToPoint, RegistrationVariant::PointToPlane] {
        let problem = registration_problem::<3, Isometry3<f64>>(&source, &target, &pairs, variant).unwrap();
        check_all(&problem, &Isometry3::identity(), &mut rng, 1.0, "registration 3-D");
    }
}

#[test]
fn registration_2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points: Vec<Vector2<f64>> = (0..40).map(|_| Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect();
    let normals: Vec<Vector2<f64>> = (0..40)
        .map(|_| Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(0.2..1.0)).normalize())
        .collect();
    let cloud = PointCloud::new(points, Some(normals)).unwrap();
    let pairs: Vec<usize> = (0..40).rev().collect();
    for variant in [RegistrationVariant::PointToPoint, RegistrationVariant::PointToPlane] {
        let problem = registration_problem::<2, Isometry2<f64>>(&cloud, &cloud, &pairs, variant).unwrap();
        check_all(&problem, &Isometry2::identity(), &mut rng, 1.0, "registration 2-D");
    }
}

#[test]
fn bundle_adjustment() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (scene, truth) = synthetic_ba_scene(&mut rng, &BaSceneConfig::default()).unwrap();
    let problem = ba_problem(&scene).unwrap();
    check_all(&problem, &truth, &mut rng, 0.05, "bundle adjustment");
}
