//! Projected-point overlays for eyeballing an extrinsic.

use std::collections::BTreeSet;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_points, CameraIntrinsics, PointCloud, RigidTransform};
use crate::raster::{rasterize, SparseRaster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlayColor {
    /// Inverse depth relative to the nearest point: near is red, far is blue.
    #[default]
    InverseDepth,
    /// Point intensity, dark blue to red.
    Intensity,
}

/// Blue → cyan → yellow → red ramp over `[0, 1]`.
pub fn colormap(v: f64) -> Rgb<u8> {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let stops: [[f64; 3]; 4] = [[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
    let x = v * 3.0;
    let i = (x.floor() as usize).min(2);
    let f = x - i as f64;
    let c = [0, 1, 2].map(|k| stops[i][k] + (stops[i + 1][k] - stops[i][k]) * f);
    Rgb(c.map(|k| (k * 255.0).round() as u8))
}

fn check_size(image: &RgbImage, k: &CameraIntrinsics) -> Result<()> {
    if image.width() != k.width || image.height() != k.height {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, intrinsics expect {}x{}",
            image.width(),
            image.height(),
            k.width,
            k.height
        )));
    }
    Ok(())
}

fn project(cloud: &PointCloud, t: &RigidTransform, k: &CameraIntrinsics, color: OverlayColor) -> SparseRaster {
    let (ldp, lip) = rasterize(&project_points(cloud, t, k), k.width, k.height);
    match color {
        OverlayColor::InverseDepth => ldp,
        OverlayColor::Intensity => lip,
    }
}

/// Pixels `(col, row)` that receive a point under `t`. Identical to the set
/// of pixels [`render_overlay`] recolors.
pub fn overlay_pixels(
    cloud: &PointCloud,
    t: &RigidTransform,
    k: &CameraIntrinsics,
) -> BTreeSet<(u32, u32)> {
    project(cloud, t, k, OverlayColor::InverseDepth)
        .iter()
        .map(|(c, r, _)| (c, r))
        .collect()
}

/// Copy of `image` with every projected point drawn as one colored pixel.
pub fn render_overlay(
    image: &RgbImage,
    cloud: &PointCloud,
    t: &RigidTransform,
    k: &CameraIntrinsics,
    color: OverlayColor,
) -> Result<RgbImage> {
    check_size(image, k)?;
    let mut out = image.clone();
    for (col, row, v) in project(cloud, t, k, color).iter() {
        out.put_pixel(col, row, colormap(v));
    }
    Ok(out)
}
