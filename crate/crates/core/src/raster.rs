//! The four aligned rasters: equalized grayscale (GI), monodepth (MI), and the
//! sparse LiDAR depth and intensity projections (LDP, LIP).

use std::path::Path;

use image::{ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PointCloud, ProjectedPoint};

/// Luma weights (R, G, B).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// 16-bit single-channel monodepth image, larger = nearer.
pub type MonodepthImage = ImageBuffer<Luma<u16>, Vec<u16>>;

/// Row-major `H×W` scalar image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl DenseImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidParameter(format!(
                "image value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self::new(width, height, data)
    }

    pub fn constant(width: u32, height: u32, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, col: u32, row: u32) -> f64 {
        self.data[row as usize * self.width as usize + col as usize]
    }

    #[inline]
    pub(crate) fn at(&self, pixel: usize) -> f64 {
        self.data[pixel]
    }

    /// Applies `f` to every value; the result must stay in `[0, 1]`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn same_size(&self, k: &CameraIntrinsics) -> bool {
        self.width == k.width && self.height == k.height
    }
}

/// One occupied pixel of a [`SparseRaster`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterEntry {
    /// Row-major pixel index `row * width + col`.
    pub pixel: u32,
    pub value: f64,
}

/// Pixel-indexed sparse image. Entries are unique and sorted by pixel index;
/// pixels without an entry are idle.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRaster {
    width: u32,
    height: u32,
    entries: Vec<RasterEntry>,
}

impl SparseRaster {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            entries: Vec::new(),
        }
    }

    /// Builds a raster from `(col, row, value)` triples. Later duplicates of
    /// a pixel are rejected.
    pub fn from_entries(
        width: u32,
        height: u32,
        entries: impl IntoIterator<Item = (u32, u32, f64)>,
    ) -> Result<Self> {
        let mut out: Vec<RasterEntry> = Vec::new();
        for (col, row, value) in entries {
            if col >= width || row >= height {
                return Err(Error::InvalidParameter(format!(
                    "pixel ({col}, {row}) outside {width}x{height}"
                )));
            }
            out.push(RasterEntry {
                pixel: row * width + col,
                value,
            });
        }
        out.sort_by_key(|e| e.pixel);
        if out.windows(2).any(|w| w[0].pixel == w[1].pixel) {
            return Err(Error::InvalidParameter("duplicate raster pixel".into()));
        }
        Ok(Self {
            width,
            height,
            entries: out,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RasterEntry] {
        &self.entries
    }

    pub fn get(&self, col: u32, row: u32) -> Option<f64> {
        if col >= self.width || row >= self.height {
            return None;
        }
        let pixel = row * self.width + col;
        self.entries
            .binary_search_by_key(&pixel, |e| e.pixel)
            .ok()
            .map(|i| self.entries[i].value)
    }

    /// `(col, row, value)` in pixel order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.entries
            .iter()
            .map(|e| (e.pixel % self.width, e.pixel / self.width, e.value))
    }
}

/// Histogram-equalizes 8-bit levels: each level maps to the fraction of
/// samples at or below it.
pub fn equalize_levels(levels: &[u8]) -> Vec<f64> {
    let mut hist = [0u64; 256];
    for &l in levels {
        hist[l as usize] += 1;
    }
    let n = levels.len() as f64;
    let mut lut = [0.0f64; 256];
    let mut cum = 0u64;
    for (level, count) in hist.iter().enumerate() {
        cum += count;
        lut[level] = cum as f64 / n;
    }
    levels.iter().map(|&l| lut[l as usize]).collect()
}

/// Luma level of an RGB pixel, rounded to the nearest 8-bit level.
pub fn luma_level(rgb: [u8; 3]) -> u8 {
    let y = LUMA_WEIGHTS[0] * rgb[0] as f64
        + LUMA_WEIGHTS[1] * rgb[1] as f64
        + LUMA_WEIGHTS[2] * rgb[2] as f64;
    y.round().clamp(0.0, 255.0) as u8
}

/// Grayscale conversion followed by 256-level histogram equalization.
pub fn to_grayscale_equalized(rgb: &RgbImage) -> Result<DenseImage> {
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    let levels: Vec<u8> = rgb.pixels().map(|p| luma_level(p.0)).collect();
    DenseImage::new(w, h, equalize_levels(&levels))
}

/// Remaps point intensities through their empirical CDF. Positions are
/// untouched and the intensity ordering is preserved.
pub fn equalize_intensity(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut sorted: Vec<f64> = cloud.points.iter().map(|p| p.intensity).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out = cloud.clone();
    for p in &mut out.points {
        let at_or_below = sorted.partition_point(|&v| v <= p.intensity);
        p.intensity = at_or_below as f64 / n;
    }
    Ok(out)
}

/// Reusable z-buffer. Keeps one slot per pixel so repeated rasterization at
/// the same image size does no allocation.
#[derive(Debug, Default)]
pub struct Rasterizer {
    zbuf: Vec<u32>,
    touched: Vec<u32>,
    radix_tmp: Vec<u32>,
    radix_counts: Vec<u32>,
}

const MAX_RADIX_BITS: u32 = 11;

/// LSD radix sort of keys below `bound`.
fn radix_sort(keys: &mut Vec<u32>, tmp: &mut Vec<u32>, counts: &mut Vec<u32>, bound: usize) {
    if keys.len() < 64 {
        keys.sort_unstable();
        return;
    }
    let bits = usize::BITS - bound.leading_zeros();
    let passes = bits.div_ceil(MAX_RADIX_BITS).max(1);
    let digit = bits.div_ceil(passes);
    let buckets = 1usize << digit;
    let mask = (buckets - 1) as u32;
    tmp.resize(keys.len(), 0);
    let mut shift = 0;
    while shift < bits {
        counts.clear();
        counts.resize(buckets, 0);
        for &k in keys.iter() {
            counts[((k >> shift) & mask) as usize] += 1;
        }
        let mut sum = 0;
        for c in counts.iter_mut() {
            let n = *c;
            *c = sum;
            sum += n;
        }
        for &k in keys.iter() {
            let slot = &mut counts[((k >> shift) & mask) as usize];
            tmp[*slot as usize] = k;
            *slot += 1;
        }
        std::mem::swap(keys, tmp);
        shift += digit;
    }
}

const EMPTY_SLOT: u32 = u32::MAX;

impl Rasterizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Z-buffered rasterization into LDP (inverse depth, divided by the
    /// frame maximum) and LIP (intensity). The nearest point wins a pixel in
    /// both rasters; on equal inverse depth the earlier point wins.
    pub fn rasterize(
        &mut self,
        projected: &[ProjectedPoint],
        width: u32,
        height: u32,
    ) -> (SparseRaster, SparseRaster) {
        let mut ldp = SparseRaster::empty(width, height);
        let mut lip = SparseRaster::empty(width, height);
        self.rasterize_into(projected, width, height, &mut ldp, &mut lip);
        (ldp, lip)
    }

    pub(crate) fn rasterize_into(
        &mut self,
        projected: &[ProjectedPoint],
        width: u32,
        height: u32,
        ldp: &mut SparseRaster,
        lip: &mut SparseRaster,
    ) {
        let n_pixels = width as usize * height as usize;
        if self.zbuf.len() != n_pixels {
            self.zbuf.clear();
            self.zbuf.resize(n_pixels, EMPTY_SLOT);
        }
        self.touched.clear();
        for (i, p) in projected.iter().enumerate() {
            debug_assert!(p.col < width && p.row < height);
            let pixel = p.row * width + p.col;
            let slot = &mut self.zbuf[pixel as usize];
            if *slot == EMPTY_SLOT {
                *slot = i as u32;
                self.touched.push(pixel);
            } else if p.inv_depth > projected[*slot as usize].inv_depth {
                *slot = i as u32;
            }
        }
        radix_sort(
            &mut self.touched,
            &mut self.radix_tmp,
            &mut self.radix_counts,
            n_pixels,
        );

        let max_inv = self
            .touched
            .iter()
            .map(|&px| projected[self.zbuf[px as usize] as usize].inv_depth)
            .fold(0.0f64, f64::max);

        for r in [&mut *ldp, &mut *lip] {
            r.width = width;
            r.height = height;
            r.entries.clear();
            r.entries.reserve(self.touched.len());
        }
        for &pixel in &self.touched {
            let slot = &mut self.zbuf[pixel as usize];
            let p = &projected[*slot as usize];
            *slot = EMPTY_SLOT;
            ldp.entries.push(RasterEntry {
                pixel,
                value: p.inv_depth / max_inv,
            });
            lip.entries.push(RasterEntry {
                pixel,
                value: p.intensity,
            });
        }
    }
}

/// One-shot convenience wrapper around [`Rasterizer::rasterize`].
pub fn rasterize(
    projected: &[ProjectedPoint],
    width: u32,
    height: u32,
) -> (SparseRaster, SparseRaster) {
    Rasterizer::new().rasterize(projected, width, height)
}

/// Scales a 16-bit monodepth image to `[0, 1]`.
pub fn monodepth_from_image(img: &MonodepthImage) -> Result<DenseImage> {
    let (w, h) = img.dimensions();
    DenseImage::new(
        w,
        h,
        img.pixels().map(|p| p.0[0] as f64 / u16::MAX as f64).collect(),
    )
}

/// Quantizes a `[0, 1]` image to the 16-bit monodepth format.
pub fn monodepth_to_image(mi: &DenseImage) -> MonodepthImage {
    ImageBuffer::from_fn(mi.width(), mi.height(), |c, r| {
        Luma([(mi.get(c, r) * u16::MAX as f64).round() as u16])
    })
}

/// Loads a 16-bit single-channel monodepth file and checks it against the
/// camera image size.
pub fn load_monodepth(path: &Path, k: &CameraIntrinsics) -> Result<DenseImage> {
    let img = image::open(path)
        .map_err(|e| Error::image(path, e))?
        .into_luma16();
    let (w, h) = img.dimensions();
    if w != k.width || h != k.height {
        return Err(Error::MonodepthSizeMismatch {
            expected_width: k.width,
            expected_height: k.height,
            found_width: w,
            found_height: h,
        });
    }
    monodepth_from_image(&img)
}

pub fn save_monodepth(path: &Path, mi: &DenseImage) -> Result<()> {
    monodepth_to_image(mi)
        .save(path)
        .map_err(|e| Error::image(path, e))
}

/// Loads an 8-bit camera image as RGB (grayscale files are replicated).
pub fn load_camera_image(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|e| Error::image(path, e))?
        .into_rgb8())
}
