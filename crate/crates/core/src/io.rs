//! File formats: binary point clouds, KITTI calibration text, and the native
//! TOML frame manifest.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, EulerAngles, LidarPoint, PointCloud, RigidTransform};
use crate::objective::{FramePacket, ObjectiveConfig};
use crate::raster::{load_camera_image, load_monodepth};
use crate::search::SearchConfig;

/// Bytes per point record: x, y, z, intensity as little-endian `f32`.
pub const POINT_RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct CloudLoad {
    pub cloud: PointCloud,
    /// Records skipped because a field was NaN or infinite.
    pub dropped: usize,
}

/// Decodes 16-byte point records. Non-finite records are dropped and
/// intensities are clamped to `[0, 1]`.
pub fn decode_point_cloud(bytes: &[u8], path: &Path) -> Result<CloudLoad> {
    let remainder = bytes.len() % POINT_RECORD_BYTES;
    if remainder != 0 {
        return Err(Error::MalformedCloud {
            path: path.to_path_buf(),
            offset: (bytes.len() - remainder) as u64,
            remainder: remainder as u64,
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / POINT_RECORD_BYTES);
    let mut dropped = 0;
    for rec in bytes.chunks_exact(POINT_RECORD_BYTES) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let v = [f(0), f(1), f(2), f(3)];
        if v.iter().all(|x| x.is_finite()) {
            points.push(LidarPoint::new(
                v[0] as f64,
                v[1] as f64,
                v[2] as f64,
                (v[3] as f64).clamp(0.0, 1.0),
            ));
        } else {
            dropped += 1;
        }
    }
    Ok(CloudLoad {
        cloud: PointCloud::new(points),
        dropped,
    })
}

pub fn load_point_cloud(path: &Path) -> Result<CloudLoad> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        warn!("{}: empty point cloud file", path.display());
    }
    let load = decode_point_cloud(&bytes, path)?;
    if load.dropped > 0 {
        warn!(
            "{}: dropped {} non-finite point records",
            path.display(),
            load.dropped
        );
    }
    Ok(load)
}

pub fn encode_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_RECORD_BYTES);
    for p in &cloud.points {
        for v in [p.position.x, p.position.y, p.position.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_point_cloud(cloud)).map_err(|e| Error::io(path, e))
}

/// Intrinsics and LiDAR-to-camera extrinsic read from KITTI calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KittiCalib {
    pub intrinsics: CameraIntrinsics,
    pub extrinsic: RigidTransform,
}

type CalibRows = HashMap<String, (Vec<f64>, PathBuf)>;

fn parse_calib_rows(text: &str, path: &Path, rows: &mut CalibRows) -> Result<()> {
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, rest)) = line.split_once(':') else {
            return Err(Error::parse(path, format!("line {}: expected `key: values`", lineno + 1)));
        };
        // non-numeric rows such as calib_time are skipped
        let values: std::result::Result<Vec<f64>, _> =
            rest.split_whitespace().map(str::parse::<f64>).collect();
        if let Ok(values) = values {
            rows.insert(key.trim().to_string(), (values, path.to_path_buf()));
        }
    }
    Ok(())
}

fn row<'a>(rows: &'a CalibRows, keys: &[&str], len: usize) -> Result<Option<&'a [f64]>> {
    for key in keys {
        if let Some((values, path)) = rows.get(*key) {
            if values.len() != len {
                return Err(Error::parse(
                    path,
                    format!("`{key}` has {} values, expected {len}", values.len()),
                ));
            }
            return Ok(Some(values));
        }
    }
    Ok(None)
}

fn required<'a>(rows: &'a CalibRows, keys: &[&str], len: usize, path: &Path) -> Result<&'a [f64]> {
    row(rows, keys, len)?.ok_or_else(|| Error::MissingCalibKey {
        path: path.to_path_buf(),
        key: keys[0].to_string(),
    })
}

/// Reads KITTI calibration from one or more files, e.g. a single odometry
/// `calib.txt` or the raw pair `calib_cam_to_cam.txt` +
/// `calib_velo_to_cam.txt`.
///
/// Keys: `P2` (or `P_rect_02`), `R0_rect` (or `R_rect_00`), and either
/// `Tr_velo_to_cam` or `Tr` (3×4) or `R` + `T`. `R0_rect` may be omitted
/// only with the odometry-style `Tr` key. The projection row's fourth
/// column is a baseline offset `K·b`; it is folded into the extrinsic so
/// that `K·(R·p + t)` reproduces `P2 · R0 · [Tr | 1]`.
pub fn load_kitti_calib(paths: &[&Path], width: u32, height: u32) -> Result<KittiCalib> {
    let (rows, first) = read_calib_rows(paths)?;
    let (pinhole, extrinsic) = calib_from_rows(&rows, first)?;
    let [fx, fy, cx, cy] = pinhole;
    Ok(KittiCalib {
        intrinsics: CameraIntrinsics::new(fx, fy, cx, cy, width, height)?,
        extrinsic,
    })
}

/// Like [`load_kitti_calib`] but returns only the extrinsic, so the image
/// size is not needed.
pub fn load_kitti_extrinsic(paths: &[&Path]) -> Result<RigidTransform> {
    let (rows, first) = read_calib_rows(paths)?;
    Ok(calib_from_rows(&rows, first)?.1)
}

fn read_calib_rows<'a>(paths: &[&'a Path]) -> Result<(CalibRows, &'a Path)> {
    let Some(first) = paths.first() else {
        return Err(Error::InvalidParameter("no calibration file given".into()));
    };
    let mut rows = CalibRows::new();
    for path in paths {
        let text = fs::read_to_string(path).map_err(|e| Error::io(*path, e))?;
        parse_calib_rows(&text, path, &mut rows)?;
    }
    Ok((rows, first))
}

/// `([fx, fy, cx, cy], extrinsic)` from parsed rows.
fn calib_from_rows(rows: &CalibRows, path: &Path) -> Result<([f64; 4], RigidTransform)> {
    let p = required(rows, &["P2", "P_rect_02"], 12, path)?;
    let bad_p = |msg: &str| Error::parse(path, format!("projection row: {msg}"));
    if p[1].abs() > 1e-9 || p[4].abs() > 1e-12 || p[8].abs() > 1e-12 || p[9].abs() > 1e-12 {
        return Err(bad_p("skewed or non-pinhole projection is not supported"));
    }
    if (p[10] - 1.0).abs() > 1e-12 {
        return Err(bad_p("P[2][2] must be 1"));
    }
    let (fx, cx, fy, cy) = (p[0], p[2], p[5], p[6]);
    if !(fx > 0.0 && fy > 0.0) {
        return Err(bad_p("focal lengths must be positive"));
    }
    let bz = p[11];
    let by = (p[7] - cy * bz) / fy;
    let bx = (p[3] - cx * bz - p[1] * by) / fx;
    let baseline = Vector3::new(bx, by, bz);

    let (r_tr, t_tr, has_tr_odometry) =
        if let Some(tr) = row(rows, &["Tr_velo_to_cam"], 12)? {
            (mat3x4_rotation(tr), mat3x4_translation(tr), false)
        } else if let Some(tr) = row(rows, &["Tr"], 12)? {
            (mat3x4_rotation(tr), mat3x4_translation(tr), true)
        } else if let Some(r) = row(rows, &["R"], 9)? {
            let t = required(rows, &["T"], 3, path)?;
            (Matrix3::from_row_slice(r), Vector3::from_row_slice(t), false)
        } else {
            return Err(Error::MissingCalibKey {
                path: path.to_path_buf(),
                key: "Tr_velo_to_cam".into(),
            });
        };
    let r0 = match row(rows, &["R0_rect", "R_rect_00"], 9)? {
        Some(r) => Matrix3::from_row_slice(r),
        None if has_tr_odometry => Matrix3::identity(),
        None => {
            return Err(Error::MissingCalibKey {
                path: path.to_path_buf(),
                key: "R0_rect".into(),
            })
        }
    };
    let extrinsic = RigidTransform::new(r0 * r_tr, r0 * t_tr + baseline);
    if !extrinsic.is_valid(1e-4) {
        return Err(Error::parse(path, "velo-to-cam rotation is not orthonormal"));
    }
    Ok(([fx, fy, cx, cy], extrinsic))
}

fn mat3x4_rotation(v: &[f64]) -> Matrix3<f64> {
    Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10])
}

fn mat3x4_translation(v: &[f64]) -> Vector3<f64> {
    Vector3::new(v[3], v[7], v[11])
}

fn fmt_row(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes a KITTI-style calibration file with identity rectification and a
/// zero baseline.
pub fn write_kitti_calib(path: &Path, k: &CameraIntrinsics, t: &RigidTransform) -> Result<()> {
    let r = &t.rotation;
    let tr = &t.translation;
    let text = format!(
        "P2: {}\nR0_rect: {}\nTr_velo_to_cam: {}\n",
        fmt_row([k.fx, 0.0, k.cx, 0.0, 0.0, k.fy, k.cy, 0.0, 0.0, 0.0, 1.0, 0.0]),
        fmt_row([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
        fmt_row([
            r[(0, 0)], r[(0, 1)], r[(0, 2)], tr.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], tr.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], tr.z,
        ]),
    );
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// An extrinsic written either as a rotation matrix or as Euler angles
/// (roll, pitch, yaw in degrees, `R = Rx·Ry·Rz`), plus a translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub euler_deg: Option<[f64; 3]>,
    pub translation: [f64; 3],
}

impl TransformSpec {
    pub fn from_transform(t: &RigidTransform) -> Self {
        let r = &t.rotation;
        Self {
            rotation: Some([0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]])),
            euler_deg: None,
            translation: t.translation.into(),
        }
    }

    pub fn from_euler(e: EulerAngles, translation: [f64; 3]) -> Self {
        Self {
            rotation: None,
            euler_deg: Some(e.to_array()),
            translation,
        }
    }

    /// Reads a standalone TOML transform file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::parse(path, e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn to_transform(&self) -> Result<RigidTransform> {
        let translation = Vector3::from(self.translation);
        let t = match (self.rotation, self.euler_deg) {
            (Some(r), None) => RigidTransform::new(
                Matrix3::from_fn(|i, j| r[i][j]),
                translation,
            ),
            (None, Some(e)) => RigidTransform::from_euler(EulerAngles::from_array(e), translation),
            _ => {
                return Err(Error::InvalidParameter(
                    "transform needs exactly one of `rotation` and `euler_deg`".into(),
                ))
            }
        };
        if !t.is_valid(1e-6) {
            return Err(Error::InvalidParameter(
                "transform rotation is not orthonormal with determinant 1".into(),
            ));
        }
        Ok(t)
    }
}

pub const MANIFEST_VERSION: u32 = 1;

/// Native frame manifest. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameManifest {
    pub version: u32,
    pub image: PathBuf,
    pub monodepth: PathBuf,
    pub cloud: PathBuf,
    /// KITTI calibration file(s); supply intrinsics and, unless
    /// `ground_truth` is set, the ground truth.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calib: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<TransformSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_guess: Option<TransformSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchConfig>,
}

impl FrameManifest {
    pub fn new(image: PathBuf, monodepth: PathBuf, cloud: PathBuf) -> Self {
        Self {
            version: MANIFEST_VERSION,
            image,
            monodepth,
            cloud,
            calib: Vec::new(),
            intrinsics: None,
            ground_truth: None,
            initial_guess: None,
            objective: None,
            search: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: FrameManifest =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::parse(
                path,
                format!("unsupported manifest version {}", m.version),
            ));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        m.image = resolve(&m.image);
        m.monodepth = resolve(&m.monodepth);
        m.cloud = resolve(&m.cloud);
        m.calib = m.calib.iter().map(resolve).collect();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A frame loaded from disk, before and after preprocessing.
#[derive(Debug, Clone)]
pub struct LoadedFrame {
    pub packet: FramePacket,
    pub image: image::RgbImage,
    pub raw_cloud: PointCloud,
    pub ground_truth: Option<RigidTransform>,
    pub initial_guess: Option<RigidTransform>,
    pub dropped_points: usize,
}

/// Loads and preprocesses every file a manifest references, checking that
/// image, monodepth and intrinsics agree on size.
pub fn load_frame(m: &FrameManifest) -> Result<LoadedFrame> {
    let image = load_camera_image(&m.image)?;
    let (w, h) = image.dimensions();
    let calib = if m.calib.is_empty() {
        None
    } else {
        let paths: Vec<&Path> = m.calib.iter().map(PathBuf::as_path).collect();
        Some(load_kitti_calib(&paths, w, h)?)
    };
    let intrinsics = match (m.intrinsics, calib) {
        (Some(k), _) => k,
        (None, Some(c)) => c.intrinsics,
        (None, None) => {
            return Err(Error::InvalidParameter(
                "manifest needs `intrinsics` or `calib`".into(),
            ))
        }
    };
    intrinsics.validate()?;
    if (w, h) != (intrinsics.width, intrinsics.height) {
        return Err(Error::DimensionMismatch(format!(
            "image {} is {w}x{h}, intrinsics say {}x{}",
            m.image.display(),
            intrinsics.width,
            intrinsics.height
        )));
    }
    let mi = load_monodepth(&m.monodepth, &intrinsics)?;
    let cloud = load_point_cloud(&m.cloud)?;
    let ground_truth = match (&m.ground_truth, calib) {
        (Some(spec), _) => Some(spec.to_transform()?),
        (None, Some(c)) => Some(c.extrinsic),
        (None, None) => None,
    };
    let initial_guess = m.initial_guess.map(|s| s.to_transform()).transpose()?;
    let packet = FramePacket::from_raw(&image, mi, &cloud.cloud, intrinsics)?;
    Ok(LoadedFrame {
        packet,
        image,
        raw_cloud: cloud.cloud,
        ground_truth,
        initial_guess,
        dropped_points: cloud.dropped,
    })
}
