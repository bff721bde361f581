//! Self-consistent synthetic frames for testing without real data.
//!
//! The world is the LiDAR frame (x forward, y left, z up) holding a ground
//! plane, an oblique back wall with open sky above it, and a few upright
//! boxes. Ground and wall carry a checker of reflectivity tiles. The camera
//! image, monodepth and LiDAR scan are all ray cast from the same geometry,
//! so the ground-truth extrinsic is known exactly.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, EulerAngles, LidarPoint, PointCloud, RigidTransform};
use crate::io::{write_kitti_calib, write_point_cloud, FrameManifest, TransformSpec};
use crate::objective::FramePacket;
use crate::raster::{monodepth_from_image, monodepth_to_image, save_monodepth, DenseImage};

/// Upper bound on boxes: ground, wall and boxes need distinct reflectivity
/// levels from `0.0, 0.1, …, 0.9`.
pub const MAX_BOXES: usize = 8;

pub const SKY_REFLECTIVITY: f64 = 1.0;

/// Nominal FLU LiDAR to RDF camera mounting.
pub fn nominal_extrinsic() -> RigidTransform {
    RigidTransform::from_euler(
        EulerAngles::new(90.0, 0.0, 90.0),
        Vector3::new(0.0, -0.04, -0.08),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPattern {
    pub rings: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub azimuth_min_deg: f64,
    pub azimuth_max_deg: f64,
    pub azimuth_step_deg: f64,
    pub max_range_m: f64,
}

impl Default for ScanPattern {
    fn default() -> Self {
        Self {
            rings: 32,
            elevation_min_deg: -22.0,
            elevation_max_deg: 6.0,
            azimuth_min_deg: -60.0,
            azimuth_max_deg: 60.0,
            azimuth_step_deg: 0.35,
            max_range_m: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    /// LiDAR height above the ground plane.
    pub lidar_height_m: f64,
    /// Wall distance straight ahead of the LiDAR.
    pub wall_distance_m: f64,
    /// Wall plane is `x = wall_distance_m + wall_slope * y`.
    pub wall_slope: f64,
    /// Wall top above the ground plane.
    pub wall_height_m: f64,
    /// Checker tile size on the ground and wall. Every other tile takes a
    /// seeded level instead of the surface reflectivity. `0` disables tiling.
    pub tile_m: f64,
    pub box_distance_m: [f64; 2],
    /// Box azimuth range from the LiDAR, degrees either side of forward.
    pub box_azimuth_deg: f64,
    pub box_width_m: [f64; 2],
    pub box_height_m: [f64; 2],
}

impl Default for SceneLayout {
    fn default() -> Self {
        Self {
            lidar_height_m: 1.7,
            wall_distance_m: 28.0,
            wall_slope: 0.6,
            wall_height_m: 4.5,
            tile_m: 1.0,
            box_distance_m: [4.0, 16.0],
            box_azimuth_deg: 35.0,
            box_width_m: [0.6, 2.4],
            box_height_m: [1.0, 3.5],
        }
    }
}

/// Per-primitive affine drift `a · inv_depth + b · max_inv_depth` applied to
/// the monodepth, with `a` and `b` drawn uniformly from these ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthDistortion {
    pub scale: [f64; 2],
    pub shift: [f64; 2],
}

impl Default for DepthDistortion {
    fn default() -> Self {
        Self {
            scale: [0.95, 1.05],
            shift: [-0.01, 0.01],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub boxes: usize,
    /// Ground, wall, then one per box. Drawn from the seed when `None`.
    pub reflectivity: Option<Vec<f64>>,
    pub intrinsics: CameraIntrinsics,
    /// Drawn near [`nominal_extrinsic`] from the seed when `None`.
    pub ground_truth: Option<RigidTransform>,
    pub scan: ScanPattern,
    pub layout: SceneLayout,
    pub distortion: DepthDistortion,
    /// Uniform range noise half-width, meters.
    pub range_noise_m: f64,
}

impl SyntheticSceneSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            boxes: 8,
            reflectivity: None,
            intrinsics: CameraIntrinsics::new(520.0, 520.0, 512.0, 192.0, 1024, 384)
                .expect("valid default intrinsics"),
            ground_truth: None,
            scan: ScanPattern::default(),
            layout: SceneLayout::default(),
            distortion: DepthDistortion::default(),
            range_noise_m: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.boxes == 0 {
            return Err(Error::DegenerateScene("scene needs at least one box".into()));
        }
        if self.boxes > MAX_BOXES {
            return Err(Error::InvalidParameter(format!(
                "at most {MAX_BOXES} boxes are supported"
            )));
        }
        self.intrinsics.validate()?;
        if let Some(r) = &self.reflectivity {
            if r.len() != self.boxes + 2 {
                return Err(Error::InvalidParameter(format!(
                    "expected {} reflectivities, got {}",
                    self.boxes + 2,
                    r.len()
                )));
            }
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidParameter("reflectivity outside [0, 1]".into()));
            }
            let mut all = r.clone();
            all.push(SKY_REFLECTIVITY);
            all.sort_by(f64::total_cmp);
            if all.windows(2).any(|w| w[1] - w[0] < 0.1 - 1e-9) {
                return Err(Error::InvalidParameter(
                    "reflectivities (and sky) must be at least 0.1 apart".into(),
                ));
            }
        }
        if let Some(t) = &self.ground_truth {
            if !t.is_valid(1e-9) {
                return Err(Error::InvalidParameter("ground truth is not a rigid transform".into()));
            }
        }
        let s = &self.scan;
        if s.rings < 2 || s.azimuth_step_deg <= 0.0 || s.elevation_max_deg <= s.elevation_min_deg {
            return Err(Error::InvalidParameter("bad scan pattern".into()));
        }
        Ok(())
    }
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self::new(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct UprightBox {
    center: [f64; 2],
    yaw: f64,
    half: [f64; 2],
    height: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Scene {
    layout: SceneLayout,
    boxes: Vec<UprightBox>,
    reflectivity: Vec<f64>,
    /// `TILE_PERIOD²` levels per tiled surface (ground, wall).
    tiles: [Vec<f64>; 2],
}

const TILE_PERIOD: usize = 16;

/// First hit along a ray: distance parameter and primitive id.
type Hit = Option<(f64, usize)>;

impl Scene {
    fn ground_z(&self) -> f64 {
        -self.layout.lidar_height_m
    }

    /// Reflectivity of primitive `id` at world point `p`.
    fn reflectivity_at(&self, id: usize, p: &Point3<f64>) -> f64 {
        let tile = self.layout.tile_m;
        if id > 1 || tile <= 0.0 {
            return self.reflectivity[id];
        }
        // ground tiles on (x, y), wall tiles on (y, z)
        let (a, b) = if id == 0 { (p.x, p.y) } else { (p.y, p.z) };
        let (i, j) = ((a / tile).floor() as i64, (b / tile).floor() as i64);
        if (i + j).rem_euclid(2) == 0 {
            return self.reflectivity[id];
        }
        let period = TILE_PERIOD as i64;
        let k = i.rem_euclid(period) as usize * TILE_PERIOD + j.rem_euclid(period) as usize;
        self.tiles[id][k]
    }

    fn cast(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Hit {
        let mut best: Hit = None;
        let mut take = |t: f64, id: usize| {
            if t > 1e-9 && best.is_none_or(|(b, _)| t < b) {
                best = Some((t, id));
            }
        };
        let l = &self.layout;
        let gz = self.ground_z();
        let wall_x = |y: f64| l.wall_distance_m + l.wall_slope * y;
        if d.z < 0.0 {
            let t = (gz - o.z) / d.z;
            if o.x + t * d.x < wall_x(o.y + t * d.y) {
                take(t, 0);
            }
        }
        let toward_wall = d.x - l.wall_slope * d.y;
        if toward_wall > 0.0 {
            let t = (wall_x(o.y) - o.x) / toward_wall;
            let z = o.z + t * d.z;
            if z >= gz && z <= gz + l.wall_height_m {
                take(t, 1);
            }
        }
        for (k, b) in self.boxes.iter().enumerate() {
            if let Some(t) = b.intersect(o, d, gz) {
                take(t, k + 2);
            }
        }
        best
    }
}

impl UprightBox {
    /// Slab test in the box frame.
    fn intersect(&self, o: &Point3<f64>, d: &Vector3<f64>, ground_z: f64) -> Option<f64> {
        let (s, c) = self.yaw.sin_cos();
        let (px, py) = (o.x - self.center[0], o.y - self.center[1]);
        let lo = [c * px + s * py, -s * px + c * py, o.z];
        let ld = [c * d.x + s * d.y, -s * d.x + c * d.y, d.z];
        let bounds = [
            (-self.half[0], self.half[0]),
            (-self.half[1], self.half[1]),
            (ground_z, ground_z + self.height),
        ];
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..3 {
            let (a, b) = bounds[k];
            if ld[k].abs() < 1e-15 {
                if lo[k] < a || lo[k] > b {
                    return None;
                }
                continue;
            }
            let (mut ta, mut tb) = ((a - lo[k]) / ld[k], (b - lo[k]) / ld[k]);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        if t0 > t1 || t1 <= 0.0 {
            None
        } else if t0 > 0.0 {
            Some(t0)
        } else {
            Some(t1)
        }
    }
}

/// A generated frame: on-disk artifacts plus the preprocessed packet.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: SyntheticSceneSpec,
    pub ground_truth: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    pub image: RgbImage,
    /// Quantized monodepth as the loader would read it.
    pub monodepth: DenseImage,
    /// Raw cloud, coordinates rounded through `f32`.
    pub cloud: PointCloud,
    pub packet: FramePacket,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn build_scene(spec: &SyntheticSceneSpec, rng: &mut ChaCha8Rng) -> Scene {
    let l = spec.layout;
    let mut boxes = Vec::with_capacity(spec.boxes);
    for _ in 0..spec.boxes {
        let dist = uniform(rng, l.box_distance_m);
        let az = rng.gen_range(-l.box_azimuth_deg..=l.box_azimuth_deg).to_radians();
        boxes.push(UprightBox {
            center: [dist * az.cos(), dist * az.sin()],
            yaw: rng.gen_range(0.0..std::f64::consts::FRAC_PI_2),
            half: [uniform(rng, l.box_width_m) / 2.0, uniform(rng, l.box_width_m) / 2.0],
            height: uniform(rng, l.box_height_m),
        });
    }
    let reflectivity = match &spec.reflectivity {
        Some(r) => r.clone(),
        None => {
            let mut levels: Vec<f64> = (0..10).map(|k| k as f64 / 10.0).collect();
            levels.shuffle(rng);
            levels.truncate(spec.boxes + 2);
            levels
        }
    };
    let mut tile_levels = || -> Vec<f64> {
        (0..TILE_PERIOD * TILE_PERIOD)
            .map(|_| rng.gen_range(0..10) as f64 / 10.0)
            .collect()
    };
    let tiles = [tile_levels(), tile_levels()];
    Scene {
        layout: l,
        boxes,
        reflectivity,
        tiles,
    }
}

fn draw_ground_truth(rng: &mut ChaCha8Rng) -> RigidTransform {
    let nominal = nominal_extrinsic();
    let e = nominal
        .euler()
        .offset([0, 1, 2].map(|_| rng.gen_range(-3.0..3.0)));
    let t = nominal.translation + Vector3::from_fn(|_, _| rng.gen_range(-0.02..0.02));
    RigidTransform::from_euler(e, t)
}

/// Renders a scene. A pure function of `spec`.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = build_scene(spec, &mut rng);
    let ground_truth = match spec.ground_truth {
        Some(t) => t,
        None => draw_ground_truth(&mut rng),
    };
    let k = spec.intrinsics;

    // camera rays, expressed in the LiDAR frame
    let rt = ground_truth.rotation.transpose();
    let cam_center = Point3::from(-(rt * ground_truth.translation));
    let n = k.pixel_count();
    let mut inv_depth = vec![0.0; n];
    let mut region = vec![None; n];
    let mut reflectivity = vec![SKY_REFLECTIVITY; n];
    for row in 0..k.height {
        for col in 0..k.width {
            let dc = Vector3::new((col as f64 - k.cx) / k.fx, (row as f64 - k.cy) / k.fy, 1.0);
            // camera depth equals the ray parameter because dc.z = 1
            let d = rt * dc;
            if let Some((t, id)) = scene.cast(&cam_center, &d) {
                let px = (row * k.width + col) as usize;
                inv_depth[px] = 1.0 / t;
                region[px] = Some(id);
                reflectivity[px] = scene.reflectivity_at(id, &(cam_center + d * t));
            }
        }
    }

    let n_regions = scene.reflectivity.len();
    let affine: Vec<(f64, f64)> = (0..n_regions)
        .map(|_| (uniform(&mut rng, spec.distortion.scale), uniform(&mut rng, spec.distortion.shift)))
        .collect();
    let max_inv = inv_depth.iter().copied().fold(0.0, f64::max);
    if max_inv <= 0.0 {
        return Err(Error::DegenerateScene("camera sees no geometry".into()));
    }
    let raw_mi: Vec<f64> = inv_depth
        .iter()
        .zip(&region)
        .map(|(&v, r)| match r {
            Some(id) => affine[*id].0 * v + affine[*id].1 * max_inv,
            None => 0.0,
        })
        .collect();
    let (lo, hi) = raw_mi
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let normalized = DenseImage::new(
        k.width,
        k.height,
        raw_mi.iter().map(|v| (v - lo) / (hi - lo)).collect(),
    )?;
    let monodepth = monodepth_from_image(&monodepth_to_image(&normalized))?;

    let image = RgbImage::from_fn(k.width, k.height, |col, row| {
        let r = reflectivity[(row * k.width + col) as usize];
        let g = (r * 255.0).round() as u8;
        Rgb([g, g, g])
    });

    let s = &spec.scan;
    let mut points = Vec::new();
    let origin = Point3::origin();
    let n_az = ((s.azimuth_max_deg - s.azimuth_min_deg) / s.azimuth_step_deg).floor() as usize + 1;
    for ring in 0..s.rings {
        let el = (s.elevation_min_deg
            + (s.elevation_max_deg - s.elevation_min_deg) * ring as f64 / (s.rings - 1) as f64)
            .to_radians();
        for a in 0..n_az {
            let az = (s.azimuth_min_deg + a as f64 * s.azimuth_step_deg).to_radians();
            let d = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            if let Some((t, id)) = scene.cast(&origin, &d) {
                let noise = if spec.range_noise_m > 0.0 {
                    rng.gen_range(-spec.range_noise_m..=spec.range_noise_m)
                } else {
                    0.0
                };
                let range = t + noise;
                if t > s.max_range_m || range <= 0.0 {
                    continue;
                }
                let p = d * range;
                let f = |v: f64| v as f32 as f64;
                points.push(LidarPoint::new(
                    f(p.x),
                    f(p.y),
                    f(p.z),
                    f(scene.reflectivity_at(id, &Point3::from(d * t))),
                ));
            }
        }
    }
    let cloud = PointCloud::new(points);
    if cloud.is_empty() {
        return Err(Error::DegenerateScene("LiDAR scan hit nothing".into()));
    }
    let packet = FramePacket::from_raw(&image, monodepth.clone(), &cloud, k)?;
    Ok(SyntheticScene {
        spec: spec.clone(),
        ground_truth,
        intrinsics: k,
        image,
        monodepth,
        cloud,
        packet,
    })
}

/// File names used by [`write_synthetic_scene`].
pub const IMAGE_FILE: &str = "image.png";
pub const MONODEPTH_FILE: &str = "monodepth.png";
pub const CLOUD_FILE: &str = "cloud.bin";
pub const CALIB_FILE: &str = "calib.txt";
pub const MANIFEST_FILE: &str = "frame.toml";

/// Writes image, monodepth, cloud, KITTI calib and a manifest into `dir`
/// and returns the manifest path. `initial_guess`, when given, is recorded
/// in the manifest.
pub fn write_synthetic_scene(
    scene: &SyntheticScene,
    dir: &Path,
    initial_guess: Option<&RigidTransform>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let image_path = dir.join(IMAGE_FILE);
    scene
        .image
        .save(&image_path)
        .map_err(|e| Error::image(&image_path, e))?;
    save_monodepth(&dir.join(MONODEPTH_FILE), &scene.monodepth)?;
    write_point_cloud(&dir.join(CLOUD_FILE), &scene.cloud)?;
    write_kitti_calib(&dir.join(CALIB_FILE), &scene.intrinsics, &scene.ground_truth)?;
    let mut m = FrameManifest::new(IMAGE_FILE.into(), MONODEPTH_FILE.into(), CLOUD_FILE.into());
    m.calib = vec![CALIB_FILE.into()];
    m.initial_guess = initial_guess.map(TransformSpec::from_transform);
    let path = dir.join(MANIFEST_FILE);
    m.save(&path)?;
    Ok(path)
}
