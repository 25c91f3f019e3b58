//! Synthetic 3-D scans of a small walled courtyard with a parked box, sampled
//! uniformly by area, with exact surface normals.

use alloc::vec::Vec;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::cloud::PointCloud;
use super::geometry::RigidMotion;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScanConfig {
    pub points: usize,
    /// Half-extent of the floor along x, metres.
    pub half_length: f64,
    /// Half-extent of the floor along y, metres.
    pub half_width: f64,
    pub wall_height: f64,
    /// Isotropic Gaussian noise added to every point, metres.
    pub noise: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            points: 500,
            half_length: 5.0,
            half_width: 4.0,
            wall_height: 3.0,
            noise: 0.0,
        }
    }
}

struct Patch {
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    normal: Vector3<f64>,
}

impl Patch {
    fn new(origin: [f64; 3], u: [f64; 3], v: [f64; 3], normal: [f64; 3]) -> Self {
        Self {
            origin: origin.into(),
            u: u.into(),
            v: v.into(),
            normal: Vector3::from(normal).normalize(),
        }
    }

    fn area(&self) -> f64 {
        self.u.cross(&self.v).norm()
    }
}

fn patches(cfg: &ScanConfig) -> Vec<Patch> {
    let (l, w, h) = (cfg.half_length, cfg.half_width, cfg.wall_height);
    // parked box: 2.0 x 1.2 x 1.0, off-centre so it breaks the yard's symmetry
    let (bx, by, bl, bw, bh) = (0.3 * l, -0.4 * w, 2.0, 1.2, 1.0);
    alloc::vec![
        Patch::new([-l, -w, 0.0], [2.0 * l, 0.0, 0.0], [0.0, 2.0 * w, 0.0], [0.0, 0.0, 1.0]),
        Patch::new([-l, w, 0.0], [2.0 * l, 0.0, 0.0], [0.0, 0.0, h], [0.0, -1.0, 0.0]),
        Patch::new([-l, -w, 0.0], [2.0 * l, 0.0, 0.0], [0.0, 0.0, h], [0.0, 1.0, 0.0]),
        Patch::new([l, -w, 0.0], [0.0, 2.0 * w, 0.0], [0.0, 0.0, h], [-1.0, 0.0, 0.0]),
        Patch::new([-l, -w, 0.0], [0.0, 2.0 * w, 0.0], [0.0, 0.0, h], [1.0, 0.0, 0.0]),
        Patch::new([bx, by, 0.0], [0.0, bw, 0.0], [0.0, 0.0, bh], [-1.0, 0.0, 0.0]),
        Patch::new([bx + bl, by, 0.0], [0.0, bw, 0.0], [0.0, 0.0, bh], [1.0, 0.0, 0.0]),
        Patch::new([bx, by, 0.0], [bl, 0.0, 0.0], [0.0, 0.0, bh], [0.0, -1.0, 0.0]),
        Patch::new([bx, by + bw, 0.0], [bl, 0.0, 0.0], [0.0, 0.0, bh], [0.0, 1.0, 0.0]),
        Patch::new([bx, by, bh], [bl, 0.0, 0.0], [0.0, bw, 0.0], [0.0, 0.0, 1.0]),
    ]
}

/// Samples `cfg.points` surface points with their normals.
pub fn synthetic_scan<R: Rng + ?Sized>(rng: &mut R, cfg: &ScanConfig) -> Result<PointCloud<3>> {
    if cfg.points == 0 || !(cfg.half_length > 0.0 && cfg.half_width > 0.0 && cfg.wall_height > 0.0) {
        return Err(Error::InvalidParameter("scan needs points and positive extents".into()));
    }
    let noise = Normal::new(0.0, cfg.noise)
        .map_err(|_| Error::InvalidParameter(alloc::format!("bad scan noise {}", cfg.noise)))?;
    let patches = patches(cfg);
    let total: f64 = patches.iter().map(Patch::area).sum();
    let mut points = Vec::with_capacity(cfg.points);
    let mut normals = Vec::with_capacity(cfg.points);
    for _ in 0..cfg.points {
        let mut pick = rng.random_range(0.0..total);
        let patch = patches
            .iter()
            .find(|p| {
                pick -= p.area();
                pick < 0.0
            })
            .unwrap_or(&patches[patches.len() - 1]);
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let mut p = patch.origin + patch.u * a + patch.v * b;
        if cfg.noise > 0.0 {
            p += Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
        }
        points.push(p);
        normals.push(patch.normal);
    }
    PointCloud::new(points, Some(normals))
}

/// A target scan and a source scan of the same surface samples, the source
/// expressed in a frame displaced by `truth` (so `truth * source ~ target`).
/// Each scan gets its own independent noise.
pub fn synthetic_scan_pair<R: Rng + ?Sized, T: RigidMotion<3>>(
    rng: &mut R,
    cfg: &ScanConfig,
    truth: &T,
) -> Result<(PointCloud<3>, PointCloud<3>)> {
    let clean = synthetic_scan(rng, &ScanConfig { noise: 0.0, ..cfg.clone() })?;
    let noise = Normal::new(0.0, cfg.noise)
        .map_err(|_| Error::InvalidParameter(alloc::format!("bad scan noise {}", cfg.noise)))?;
    let jitter = |cloud: PointCloud<3>, rng: &mut R| -> Result<PointCloud<3>> {
        if cfg.noise == 0.0 {
            return Ok(cloud);
        }
        let points = cloud
            .points()
            .iter()
            .map(|p| p + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng)))
            .collect();
        PointCloud::new(points, cloud.normals().map(<[_]>::to_vec))
    };
    let source = clean.transformed(&truth.inverse());
    let target = jitter(clean, rng)?;
    let source = jitter(source, rng)?;
    Ok((source, target))
}
