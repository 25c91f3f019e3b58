//! Plain-text file formats: partition tables, residual lists, 2-D point
//! lists, point clouds and bundle-adjustment scenes.
//!
//! Blank lines and lines starting with `#` are ignored everywhere. Floats
//! are written in shortest round-trip form, so a write/read cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use adakern_core::problems::{BAScene, Intrinsics, Observation, PointCloud};
use adakern_core::PartitionTable;
use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn floats(path: &Path, line: usize, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|tok| {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, line, format!("`{tok}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(path, line, format!("`{tok}` is not finite")))
            }
        })
        .collect()
}

fn row<const N: usize>(path: &Path, line: usize, s: &str) -> Result<[f64; N]> {
    let v = floats(path, line, s)?;
    v.try_into()
        .map_err(|v: Vec<f64>| Error::parse(path, line, format!("expected {N} values, found {}", v.len())))
}

// ---------------------------------------------------------------------------
// partition table

const TABLE_MAGIC: &str = "# adakern partition table";

pub fn format_table(table: &PartitionTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TABLE_MAGIC}");
    let _ = writeln!(out, "alpha_min {}", table.alpha_min());
    let _ = writeln!(out, "alpha_max {}", table.alpha_max());
    let _ = writeln!(out, "resolution {}", table.resolution());
    let _ = writeln!(out, "tau {}", table.tau());
    let _ = writeln!(out, "intervals {}", table.intervals());
    let _ = writeln!(out, "entries {}", table.len());
    let _ = writeln!(out, "log_z");
    for v in table.log_z() {
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn parse_table(path: &Path, text: &str) -> Result<PartitionTable> {
    let mut header: [Option<f64>; 6] = [None; 6];
    const KEYS: [&str; 6] = ["alpha_min", "alpha_max", "resolution", "tau", "intervals", "entries"];
    let mut lines = content_lines(text);
    let mut body_line = 0;
    for (line, s) in lines.by_ref() {
        if s == "log_z" {
            body_line = line;
            break;
        }
        let mut parts = s.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let slot = KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::parse(path, line, format!("unknown header key `{key}`")))?;
        let value = parts.next().ok_or_else(|| Error::parse(path, line, format!("`{key}` has no value")))?;
        if parts.next().is_some() {
            return Err(Error::parse(path, line, format!("`{key}` takes one value")));
        }
        let v: f64 = value
            .parse()
            .map_err(|_| Error::parse(path, line, format!("`{value}` is not a number")))?;
        if header[slot].replace(v).is_some() {
            return Err(Error::parse(path, line, format!("duplicate header key `{key}`")));
        }
    }
    if body_line == 0 {
        return Err(Error::parse(path, 0, "missing `log_z` section"));
    }
    let mut h = [0.0; 6];
    for (i, v) in header.iter().enumerate() {
        h[i] = v.ok_or_else(|| Error::parse(path, body_line, format!("missing header key `{}`", KEYS[i])))?;
    }
    let [alpha_min, alpha_max, resolution, tau, intervals, entries] = h;
    let mut log_z = Vec::new();
    let mut last_line = body_line;
    for (line, s) in lines {
        let [v] = row::<1>(path, line, s)?;
        log_z.push(v);
        last_line = line;
    }
    if log_z.len() as f64 != entries {
        return Err(Error::parse(
            path,
            last_line,
            format!("header declares {entries} entries, found {}", log_z.len()),
        ));
    }
    if intervals < 2.0 || intervals.fract() != 0.0 {
        return Err(Error::parse(path, 0, format!("invalid interval count {intervals}")));
    }
    PartitionTable::from_parts(alpha_min, alpha_max, resolution, tau, intervals as usize, log_z)
        .map_err(|e| Error::parse(path, body_line, e.to_string()))
}

pub fn read_table(path: &Path) -> Result<PartitionTable> {
    parse_table(path, &read_text(path)?)
}

// ---------------------------------------------------------------------------
// residuals and 2-D points

/// Every whitespace-separated value in the file.
pub fn parse_residuals(path: &Path, text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (line, s) in content_lines(text) {
        out.extend(floats(path, line, s)?);
    }
    if out.is_empty() {
        return Err(Error::parse(path, 0, "no residuals found"));
    }
    Ok(out)
}

pub fn format_residuals(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}\n")).collect()
}

/// `x y` per line.
pub fn parse_points_2d(path: &Path, text: &str) -> Result<Vec<(f64, f64)>> {
    let out = content_lines(text)
        .map(|(line, s)| row::<2>(path, line, s).map(|[x, y]| (x, y)))
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(Error::parse(path, 0, "no points found"));
    }
    Ok(out)
}

pub fn format_points_2d(points: &[(f64, f64)]) -> String {
    points.iter().map(|(x, y)| format!("{x} {y}\n")).collect()
}

// ---------------------------------------------------------------------------
// point clouds

/// `x y z` or `x y z nx ny nz` per line; every line must have the same width.
pub fn parse_cloud(path: &Path, text: &str) -> Result<PointCloud<3>> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut width = None;
    for (line, s) in content_lines(text) {
        let v = floats(path, line, s)?;
        if v.len() != 3 && v.len() != 6 {
            return Err(Error::parse(path, line, format!("expected 3 or 6 values, found {}", v.len())));
        }
        if *width.get_or_insert(v.len()) != v.len() {
            return Err(Error::parse(path, line, "mixed lines with and without normals"));
        }
        points.push(Vector3::new(v[0], v[1], v[2]));
        if v.len() == 6 {
            let n = Vector3::new(v[3], v[4], v[5]);
            if (n.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::parse(path, line, "normal is not unit length"));
            }
            normals.push(n);
        }
    }
    if points.is_empty() {
        return Err(Error::parse(path, 0, "no points found"));
    }
    let normals = (width == Some(6)).then_some(normals);
    PointCloud::new(points, normals).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn format_cloud(cloud: &PointCloud<3>) -> String {
    let mut out = String::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(n) = cloud.normals() {
            let _ = write!(out, " {} {} {}", n[i].x, n[i].y, n[i].z);
        }
        out.push('\n');
    }
    out
}

pub fn read_cloud(path: &Path) -> Result<PointCloud<3>> {
    parse_cloud(path, &read_text(path)?)
}

// ---------------------------------------------------------------------------
// bundle-adjustment scenes

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Cameras,
    Poses,
    Landmarks,
    Observations,
}

impl Section {
    fn from_header(s: &str) -> Option<Self> {
        Some(match s {
            "CAMERAS" => Section::Cameras,
            "POSES" => Section::Poses,
            "LANDMARKS" => Section::Landmarks,
            "OBSERVATIONS" => Section::Observations,
            _ => return None,
        })
    }
}

fn index(path: &Path, line: usize, tok: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::parse(path, line, format!("`{tok}` is not a valid index")))
}

/// Sections `CAMERAS` (`fx fy cx cy`), `POSES` (`qw qx qy qz tx ty tz`,
/// world-to-camera), `LANDMARKS` (`x y z`) and `OBSERVATIONS`
/// (`cam_idx lm_idx u v`), each appearing once.
pub fn parse_scene(path: &Path, text: &str) -> Result<BAScene> {
    let mut intrinsics = Vec::new();
    let mut poses = Vec::new();
    let mut landmarks = Vec::new();
    let mut observations = Vec::new();
    let mut current = None;
    let mut seen = Vec::new();
    for (line, s) in content_lines(text) {
        if let Some(section) = Section::from_header(s) {
            if seen.contains(&section) {
                return Err(Error::parse(path, line, format!("section {s} appears twice")));
            }
            seen.push(section);
            current = Some(section);
            continue;
        }
        match current {
            None => return Err(Error::parse(path, line, "data before the first section header")),
            Some(Section::Cameras) => {
                let [fx, fy, cx, cy] = row::<4>(path, line, s)?;
                intrinsics.push(Intrinsics { fx, fy, cx, cy });
            }
            Some(Section::Poses) => {
                let [qw, qx, qy, qz, tx, ty, tz] = row::<7>(path, line, s)?;
                let q = Quaternion::new(qw, qx, qy, qz);
                if (q.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::parse(path, line, "pose quaternion is not unit length"));
                }
                poses.push(Isometry3::from_parts(
                    Translation3::new(tx, ty, tz),
                    UnitQuaternion::new_normalize(q),
                ));
            }
            Some(Section::Landmarks) => {
                let [x, y, z] = row::<3>(path, line, s)?;
                landmarks.push(Vector3::new(x, y, z));
            }
            Some(Section::Observations) => {
                let toks: Vec<&str> = s.split_whitespace().collect();
                if toks.len() != 4 {
                    return Err(Error::parse(path, line, format!("expected 4 values, found {}", toks.len())));
                }
                let [u, v] = row::<2>(path, line, &toks[2..].join(" "))?;
                observations.push(Observation {
                    camera: index(path, line, toks[0])?,
                    landmark: index(path, line, toks[1])?,
                    pixel: Vector2::new(u, v),
                });
            }
        }
    }
    for (section, name) in [
        (Section::Cameras, "CAMERAS"),
        (Section::Poses, "POSES"),
        (Section::Landmarks, "LANDMARKS"),
        (Section::Observations, "OBSERVATIONS"),
    ] {
        if !seen.contains(&section) {
            return Err(Error::parse(path, 0, format!("missing section {name}")));
        }
    }
    BAScene::new(intrinsics, poses, landmarks, observations).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn format_scene(scene: &BAScene) -> String {
    let mut out = String::from("CAMERAS\n");
    for k in scene.intrinsics() {
        let _ = writeln!(out, "{} {} {} {}", k.fx, k.fy, k.cx, k.cy);
    }
    out.push_str("POSES\n");
    for p in scene.poses() {
        let q = p.rotation.quaternion();
        let t = p.translation.vector;
        let _ = writeln!(out, "{} {} {} {} {} {} {}", q.w, q.i, q.j, q.k, t.x, t.y, t.z);
    }
    out.push_str("LANDMARKS\n");
    for x in scene.landmarks() {
        let _ = writeln!(out, "{} {} {}", x.x, x.y, x.z);
    }
    out.push_str("OBSERVATIONS\n");
    for o in scene.observations() {
        let _ = writeln!(out, "{} {} {} {}", o.camera, o.landmark, o.pixel.x, o.pixel.y);
    }
    out
}

pub fn read_scene(path: &Path) -> Result<BAScene> {
    parse_scene(path, &read_text(path)?)
}
