//! Bundle adjustment: pinhole reprojection residuals over camera poses and
//! landmarks, with the gauge fixed by freezing camera 0 and one centre
//! coordinate of camera 1.

use alloc::vec::Vec;

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;
use crate::solver::{BlockJacobian, Problem};

/// Observations closer than this to the image plane are invalid.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn project(&self, x: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy)
    }

    /// Viewing ray through `pixel` in camera coordinates (unit depth).
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub camera: usize,
    pub landmark: usize,
    pub pixel: Vector2<f64>,
}

/// Cameras (intrinsics and world-to-camera poses), landmarks and pixel
/// observations.
#[derive(Debug, Clone, PartialEq)]
pub struct BAScene {
    intrinsics: Vec<Intrinsics>,
    poses: Vec<Isometry3<f64>>,
    landmarks: Vec<Vector3<f64>>,
    observations: Vec<Observation>,
}

impl BAScene {
    pub fn new(
        intrinsics: Vec<Intrinsics>,
        poses: Vec<Isometry3<f64>>,
        landmarks: Vec<Vector3<f64>>,
        observations: Vec<Observation>,
    ) -> Result<Self> {
        if intrinsics.len() != poses.len() {
            return Err(Error::InvalidData(alloc::format!(
                "{} intrinsics for {} poses",
                intrinsics.len(),
                poses.len()
            )));
        }
        if poses.len() < 2 {
            return Err(Error::InvalidData("a scene needs at least 2 cameras".into()));
        }
        for (k, cam) in intrinsics.iter().enumerate() {
            let finite = [cam.fx, cam.fy, cam.cx, cam.cy].iter().all(|v| v.is_finite());
            if !finite || cam.fx == 0.0 || cam.fy == 0.0 {
                return Err(Error::InvalidData(alloc::format!("camera {k} has invalid intrinsics")));
            }
        }
        if let Some(j) = landmarks.iter().position(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidData(alloc::format!("landmark {j} is not finite")));
        }
        // first two distinct cameras seen per landmark
        let mut seen: Vec<(Option<usize>, bool)> = alloc::vec![(None, false); landmarks.len()];
        for (i, obs) in observations.iter().enumerate() {
            if obs.camera >= poses.len() || obs.landmark >= landmarks.len() {
                return Err(Error::InvalidData(alloc::format!("observation {i} references a missing camera or landmark")));
            }
            if !obs.pixel.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidData(alloc::format!("observation {i} has a non-finite pixel")));
            }
            let entry = &mut seen[obs.landmark];
            match entry.0 {
                None => entry.0 = Some(obs.camera),
                Some(c) if c != obs.camera => entry.1 = true,
                _ => {}
            }
        }
        if let Some(j) = seen.iter().position(|s| !s.1) {
            return Err(Error::InvalidData(alloc::format!("landmark {j} is observed by fewer than 2 cameras")));
        }
        Ok(Self {
            intrinsics,
            poses,
            landmarks,
            observations,
        })
    }

    pub fn intrinsics(&self) -> &[Intrinsics] {
        &self.intrinsics
    }

    pub fn poses(&self) -> &[Isometry3<f64>] {
        &self.poses
    }

    pub fn landmarks(&self) -> &[Vector3<f64>] {
        &self.landmarks
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn num_cameras(&self) -> usize {
        self.poses.len()
    }

    pub(crate) fn observations_mut(&mut self) -> &mut [Observation] {
        &mut self.observations
    }

    /// Copy of the scene with poses and landmarks taken from `state`.
    pub fn with_state(&self, state: &BaState) -> Self {
        Self {
            poses: state.poses(),
            landmarks: state.landmarks.clone(),
            ..self.clone()
        }
    }
}

/// Optimization state: world-to-camera rotations, camera centres in the
/// world frame, and landmark positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BaState {
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub centers: Vec<Vector3<f64>>,
    pub landmarks: Vec<Vector3<f64>>,
}

impl BaState {
    pub fn from_scene(scene: &BAScene) -> Self {
        Self {
            rotations: scene.poses.iter().map(|p| p.rotation).collect(),
            centers: scene.poses.iter().map(|p| -(p.rotation.inverse() * p.translation.vector)).collect(),
            landmarks: scene.landmarks.clone(),
        }
    }

    /// World-to-camera poses, `x_cam = R x + t` with `t = -R C`.
    pub fn poses(&self) -> Vec<Isometry3<f64>> {
        self.rotations
            .iter()
            .zip(&self.centers)
            .map(|(r, c)| Isometry3::from_parts(Translation3::from(-(r * c)), *r))
            .collect()
    }

    /// RMS camera-centre distance to `truth` over all cameras.
    pub fn center_rms(&self, truth: &BaState) -> f64 {
        let n = self.centers.len().max(1) as f64;
        let sum: f64 = self.centers.iter().zip(&truth.centers).map(|(a, b)| (a - b).norm_squared()).sum();
        math::sqrt(sum / n)
    }
}

/// Tangent columns of one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CameraColumns {
    rotation: Option<usize>,
    /// First column of the free centre coordinates.
    center: Option<usize>,
    /// Which of x, y, z are free.
    free: [bool; 3],
}

#[derive(Debug, Clone)]
pub struct BaProblem<'a> {
    scene: &'a BAScene,
    cameras: Vec<CameraColumns>,
    landmark_base: usize,
    dim: usize,
    fixed_axis: usize,
}

/// Builds the problem; camera 1's fixed centre axis is the one along which
/// it is farthest from camera 0 in the scene's poses.
pub fn ba_problem(scene: &BAScene) -> Result<BaProblem<'_>> {
    let state = BaState::from_scene(scene);
    let baseline = state.centers[1] - state.centers[0];
    if !(baseline.norm() > 0.0) {
        return Err(Error::InvalidData("cameras 0 and 1 share a centre; the gauge is undefined".into()));
    }
    let fixed_axis = baseline.iamax();
    let mut cameras = Vec::with_capacity(scene.num_cameras());
    cameras.push(CameraColumns {
        rotation: None,
        center: None,
        free: [false; 3],
    });
    let mut col = 0;
    for k in 1..scene.num_cameras() {
        let mut free = [true; 3];
        if k == 1 {
            free[fixed_axis] = false;
        }
        let n_free = free.iter().filter(|f| **f).count();
        cameras.push(CameraColumns {
            rotation: Some(col),
            center: Some(col + 3),
            free,
        });
        col += 3 + n_free;
    }
    Ok(BaProblem {
        scene,
        cameras,
        landmark_base: col,
        dim: col + 3 * scene.landmarks.len(),
        fixed_axis,
    })
}

impl BaProblem<'_> {
    pub fn scene(&self) -> &BAScene {
        self.scene
    }

    /// Centre coordinate of camera 1 held fixed by the gauge.
    pub fn fixed_axis(&self) -> usize {
        self.fixed_axis
    }

    fn camera_point(&self, state: &BaState, obs: &Observation) -> Vector3<f64> {
        state.rotations[obs.camera] * (state.landmarks[obs.landmark] - state.centers[obs.camera])
    }
}

impl Problem for BaProblem<'_> {
    type State = BaState;

    fn tangent_dim(&self) -> usize {
        self.dim
    }

    fn num_blocks(&self) -> usize {
        self.scene.observations.len()
    }

    fn block_dim(&self, _: usize) -> usize {
        2
    }

    fn residual(&self, state: &BaState, i: usize, out: &mut [f64]) -> bool {
        let obs = &self.scene.observations[i];
        let x = self.camera_point(state, obs);
        if !(x.z > MIN_DEPTH) {
            return false;
        }
        let uv = self.scene.intrinsics[obs.camera].project(&x) - obs.pixel;
        out[0] = uv.x;
        out[1] = uv.y;
        true
    }

    fn jacobian(&self, state: &BaState, i: usize, jac: &mut BlockJacobian) {
        let obs = &self.scene.observations[i];
        let cam = &self.scene.intrinsics[obs.camera];
        let x = self.camera_point(state, obs);
        let iz = 1.0 / x.z;
        // d pixel / d x_cam
        let p = nalgebra::Matrix2x3::new(
            cam.fx * iz, 0.0, -cam.fx * x.x * iz * iz, //
            0.0, cam.fy * iz, -cam.fy * x.y * iz * iz,
        );
        let r = state.rotations[obs.camera].to_rotation_matrix().into_inner();
        let pr = p * r;
        let cols = &self.cameras[obs.camera];
        if let Some(col) = cols.rotation {
            // left perturbation: d x_cam / d omega = -[x]x
            let skew = Matrix3::new(0.0, x.z, -x.y, -x.z, 0.0, x.x, x.y, -x.x, 0.0);
            let j = p * skew;
            copy_2x3(jac.segment(col, 3), &j, [true; 3]);
        }
        if let Some(col) = cols.center {
            let width = cols.free.iter().filter(|f| **f).count();
            copy_2x3(jac.segment(col, width), &(-pr), cols.free);
        }
        let lm = self.landmark_base + 3 * obs.landmark;
        copy_2x3(jac.segment(lm, 3), &pr, [true; 3]);
    }

    fn plus(&self, state: &BaState, delta: &[f64]) -> BaState {
        let mut next = state.clone();
        for (k, cols) in self.cameras.iter().enumerate() {
            if let Some(col) = cols.rotation {
                let omega = Vector3::new(delta[col], delta[col + 1], delta[col + 2]);
                let rot = UnitQuaternion::from_scaled_axis(omega) * state.rotations[k];
                next.rotations[k] = UnitQuaternion::new_normalize(rot.into_inner());
            }
            if let Some(col) = cols.center {
                let mut c = col;
                for axis in 0..3 {
                    if cols.free[axis] {
                        next.centers[k][axis] += delta[c];
                        c += 1;
                    }
                }
            }
        }
        for (j, x) in next.landmarks.iter_mut().enumerate() {
            let b = self.landmark_base + 3 * j;
            *x += Vector3::new(delta[b], delta[b + 1], delta[b + 2]);
        }
        next
    }
}

fn copy_2x3(out: &mut [f64], m: &nalgebra::Matrix2x3<f64>, keep: [bool; 3]) {
    let width = keep.iter().filter(|f| **f).count();
    let mut c = 0;
    for (axis, kept) in keep.iter().enumerate() {
        if *kept {
            out[c] = m[(0, axis)];
            out[width + c] = m[(1, axis)];
            c += 1;
        }
    }
}

/// Midpoint of the closest approach between the viewing rays of two
/// observations. `None` when the rays are (nearly) parallel.
pub fn triangulate_midpoint(
    centers: [&Vector3<f64>; 2],
    rotations: [&UnitQuaternion<f64>; 2],
    intrinsics: [&Intrinsics; 2],
    pixels: [&Vector2<f64>; 2],
) -> Option<Vector3<f64>> {
    let d0 = rotations[0].inverse() * intrinsics[0].unproject(pixels[0]);
    let d1 = rotations[1].inverse() * intrinsics[1].unproject(pixels[1]);
    let w = centers[0] - centers[1];
    let (a, b, c) = (d0.dot(&d0), d0.dot(&d1), d1.dot(&d1));
    let (d, e) = (d0.dot(&w), d1.dot(&w));
    let denom = a * c - b * b;
    if !(denom > 1e-12 * a * c) {
        return None;
    }
    let s = (b * e - c * d) / denom;
    let t = (a * e - b * d) / denom;
    Some(((centers[0] + d0 * s) + (centers[1] + d1 * t)) * 0.5)
}

/// Re-triangulates every landmark of `state` from the observations of the
/// two observing cameras nearest to its current position. Landmarks whose
/// rays are degenerate keep their position.
pub fn retriangulate(scene: &BAScene, state: &mut BaState) {
    let mut by_landmark: Vec<Vec<usize>> = alloc::vec![Vec::new(); state.landmarks.len()];
    for (i, obs) in scene.observations.iter().enumerate() {
        by_landmark[obs.landmark].push(i);
    }
    for (j, obs_ids) in by_landmark.iter().enumerate() {
        let x = state.landmarks[j];
        let mut ranked: Vec<(f64, usize)> = Vec::new();
        for &i in obs_ids {
            let cam = scene.observations[i].camera;
            if ranked.iter().any(|&(_, other)| scene.observations[other].camera == cam) {
                continue;
            }
            ranked.push(((state.centers[cam] - x).norm(), i));
        }
        // stable sort keeps observation order on ties
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        if ranked.len() < 2 {
            continue;
        }
        let (o0, o1) = (&scene.observations[ranked[0].1], &scene.observations[ranked[1].1]);
        if let Some(p) = triangulate_midpoint(
            [&state.centers[o0.camera], &state.centers[o1.camera]],
            [&state.rotations[o0.camera], &state.rotations[o1.camera]],
            [&scene.intrinsics[o0.camera], &scene.intrinsics[o1.camera]],
            [&o0.pixel, &o1.pixel],
        ) {
            state.landmarks[j] = p;
        }
    }
}

/// Synthetic scene layout: cameras on a horizontal arc looking at the
/// origin, landmarks uniform in a cube around it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BaSceneConfig {
    pub cameras: usize,
    pub landmarks: usize,
    /// Arc radius, metres.
    pub radius: f64,
    /// Angular span of the arc, degrees.
    pub arc_degrees: f64,
    /// Camera height above the landmark cube centre, metres.
    pub camera_height: f64,
    /// Landmarks lie in `[-e, e]^3`.
    pub landmark_extent: f64,
    pub focal: f64,
    pub image_width: f64,
    pub image_height: f64,
    /// Gaussian pixel noise on observations.
    pub pixel_noise: f64,
}

impl Default for BaSceneConfig {
    fn default() -> Self {
        Self {
            cameras: 8,
            landmarks: 150,
            radius: 10.0,
            arc_degrees: 120.0,
            camera_height: 1.0,
            landmark_extent: 3.0,
            focal: 1000.0,
            image_width: 1280.0,
            image_height: 960.0,
            pixel_noise: 0.5,
        }
    }
}

fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> UnitQuaternion<f64> {
    let forward = (target - center).normalize();
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    let m = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    UnitQuaternion::from_matrix(&m)
}

/// Generates a scene with noisy observations and returns it with the
/// ground-truth state (the scene's own poses and landmarks are the truth).
pub fn synthetic_ba_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &BaSceneConfig) -> Result<(BAScene, BaState)> {
    if cfg.cameras < 2 || cfg.landmarks == 0 {
        return Err(Error::InvalidParameter("synthetic scene needs 2+ cameras and 1+ landmarks".into()));
    }
    if !(cfg.radius > cfg.landmark_extent * math::sqrt(3.0)) {
        return Err(Error::InvalidParameter("cameras must sit outside the landmark cube".into()));
    }
    let noise = Normal::new(0.0, cfg.pixel_noise)
        .map_err(|_| Error::InvalidParameter(alloc::format!("bad pixel noise {}", cfg.pixel_noise)))?;
    let span = cfg.arc_degrees.to_radians();
    let intrinsics = Intrinsics {
        fx: cfg.focal,
        fy: cfg.focal,
        cx: cfg.image_width / 2.0,
        cy: cfg.image_height / 2.0,
    };
    let mut rotations = Vec::with_capacity(cfg.cameras);
    let mut centers = Vec::with_capacity(cfg.cameras);
    for k in 0..cfg.cameras {
        // the two arc ends come first so the gauge pins a long baseline
        let slot = match k {
            0 => 0,
            1 => cfg.cameras - 1,
            _ => k - 1,
        };
        let theta = -span / 2.0 + span * slot as f64 / (cfg.cameras - 1) as f64;
        let c = Vector3::new(cfg.radius * math::cos(theta), cfg.radius * math::sin(theta), cfg.camera_height);
        rotations.push(look_at(&c, &Vector3::zeros()));
        centers.push(c);
    }
    let e = cfg.landmark_extent;
    let mut landmarks = Vec::with_capacity(cfg.landmarks);
    let mut observations = Vec::new();
    while landmarks.len() < cfg.landmarks {
        let x = Vector3::new(rng.random_range(-e..e), rng.random_range(-e..e), rng.random_range(-e..e));
        let visible: Vec<(usize, Vector2<f64>)> = (0..cfg.cameras)
            .filter_map(|k| {
                let xc = rotations[k] * (x - centers[k]);
                if xc.z <= 0.1 {
                    return None;
                }
                let uv = intrinsics.project(&xc);
                let inside = uv.x >= 0.0 && uv.x < cfg.image_width && uv.y >= 0.0 && uv.y < cfg.image_height;
                inside.then_some((k, uv))
            })
            .collect();
        if visible.len() < 2 {
            continue;
        }
        let j = landmarks.len();
        landmarks.push(x);
        for (k, uv) in visible {
            let pixel = if cfg.pixel_noise > 0.0 {
                uv + Vector2::new(noise.sample(rng), noise.sample(rng))
            } else {
                uv
            };
            observations.push(Observation {
                camera: k,
                landmark: j,
                pixel,
            });
        }
    }
    let truth = BaState {
        rotations,
        centers,
        landmarks,
    };
    let scene = BAScene::new(alloc::vec![intrinsics; cfg.cameras], truth.poses(), truth.landmarks.clone(), observations)?;
    Ok((scene, truth))
}
