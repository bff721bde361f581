//! Patched sparse Pearson correlation between the monodepth image and the
//! LiDAR depth projection.
//!
//! The image is tiled with `S×S` patches starting at `(u0, v0)`. Inside each
//! patch only pixels that carry a LiDAR sample take part, and patches with
//! fewer than `P` samples are ignored. The loss averages `1 − SPCC` over the
//! remaining patches.

use crate::error::{Error, Result};
use crate::raster::{DenseImage, SparseRaster};

/// Variance terms `n·Σx² − (Σx)²` below this mark a patch as degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Loss reported when no patch is valid.
pub const NO_VALID_PATCH_LOSS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    /// Grid origin, pixels.
    pub u0: u32,
    pub v0: u32,
    /// Patch side, pixels.
    pub size: u32,
    /// Minimum LiDAR samples for a patch to count.
    pub min_points: usize,
}

impl PatchGrid {
    pub fn new(u0: u32, v0: u32, size: u32, min_points: usize) -> Result<Self> {
        if size < 2 || min_points < 2 || u0 >= size || v0 >= size {
            return Err(Error::InvalidParameter(format!(
                "patch grid needs S >= 2, P >= 2, 0 <= u0, v0 < S (got u0={u0}, v0={v0}, S={size}, P={min_points})"
            )));
        }
        Ok(Self {
            u0,
            v0,
            size,
            min_points,
        })
    }

    /// Number of patch rows, `⌊(H − v0) / S⌋`.
    pub fn rows(&self, height: u32) -> u32 {
        height.saturating_sub(self.v0) / self.size
    }

    /// Number of patch columns, `⌊(W − u0) / S⌋`.
    pub fn cols(&self, width: u32) -> u32 {
        width.saturating_sub(self.u0) / self.size
    }

    /// Patch index (row-major over the grid) holding a pixel, if any.
    #[inline]
    pub fn patch_of(&self, col: u32, row: u32, width: u32, height: u32) -> Option<usize> {
        if col < self.u0 || row < self.v0 {
            return None;
        }
        let j = (col - self.u0) / self.size;
        let i = (row - self.v0) / self.size;
        let (n_rows, n_cols) = (self.rows(height), self.cols(width));
        (i < n_rows && j < n_cols).then(|| (i * n_cols + j) as usize)
    }
}

/// Result of one sparse correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spcc {
    /// Fewer than `P` samples; counts as perfect correlation.
    Sparse,
    /// Either signal is constant over the samples.
    Degenerate,
    Value(f64),
}

impl Spcc {
    /// Coefficient in `[-1, 1]`; both sentinels read as 1.
    pub fn coefficient(self) -> f64 {
        match self {
            Spcc::Sparse | Spcc::Degenerate => 1.0,
            Spcc::Value(v) => v,
        }
    }

    pub fn is_valid(self) -> bool {
        matches!(self, Spcc::Value(_))
    }
}

/// Running sums for one patch. Values are shifted by the first sample so the
/// raw-sum formula does not cancel catastrophically on near-constant data;
/// the correlation is shift invariant.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PatchSums {
    n: usize,
    shift_x: f64,
    shift_y: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl PatchSums {
    #[inline]
    pub(crate) fn push(&mut self, x: f64, y: f64) {
        if self.n == 0 {
            self.shift_x = x;
            self.shift_y = y;
        }
        let (dx, dy) = (x - self.shift_x, y - self.shift_y);
        self.n += 1;
        self.sx += dx;
        self.sy += dy;
        self.sxx += dx * dx;
        self.syy += dy * dy;
        self.sxy += dx * dy;
    }

    pub(crate) fn spcc(&self, min_points: usize) -> Spcc {
        if self.n < min_points {
            return Spcc::Sparse;
        }
        let n = self.n as f64;
        let var_x = n * self.sxx - self.sx * self.sx;
        let var_y = n * self.syy - self.sy * self.sy;
        if var_x < DEGENERATE_VARIANCE || var_y < DEGENERATE_VARIANCE {
            return Spcc::Degenerate;
        }
        let cov = n * self.sxy - self.sx * self.sy;
        Spcc::Value((cov / (var_x.sqrt() * var_y.sqrt())).clamp(-1.0, 1.0))
    }
}

/// Sparse Pearson correlation of a dense patch `dense` (any pixel order) and
/// the samples `sparse`, given as `(index into dense, value)`.
pub fn spcc(dense: &[f64], sparse: &[(usize, f64)], min_points: usize) -> Spcc {
    let mut sums = PatchSums::default();
    for &(k, y) in sparse {
        sums.push(dense[k], y);
    }
    sums.spcc(min_points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureLoss {
    /// Mean of `1 − SPCC` over valid patches, in `[0, 2]`.
    pub loss: f64,
    pub n_valid: usize,
    pub n_patches: usize,
}

/// Structure loss of one patch grid.
pub fn structure_loss(
    mi: &DenseImage,
    ldp: &SparseRaster,
    grid: &PatchGrid,
) -> Result<StructureLoss> {
    structure_loss_with(mi, ldp, grid, &mut StructureScratch::default())
}

/// Reusable buffers for [`structure_loss_with`].
#[derive(Debug, Default)]
pub(crate) struct StructureScratch {
    sums: Vec<PatchSums>,
    col_patch: Vec<u32>,
    row_patch: Vec<u32>,
}

const OUTSIDE: u32 = u32::MAX;

pub(crate) fn structure_loss_with(
    mi: &DenseImage,
    ldp: &SparseRaster,
    grid: &PatchGrid,
    scratch: &mut StructureScratch,
) -> Result<StructureLoss> {
    let (w, h) = (mi.width(), mi.height());
    if ldp.width() != w || ldp.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "monodepth {w}x{h} vs depth projection {}x{}",
            ldp.width(),
            ldp.height()
        )));
    }
    let (n_rows, n_cols) = (grid.rows(h), grid.cols(w));
    let n_patches = (n_rows * n_cols) as usize;
    let StructureScratch {
        sums,
        col_patch,
        row_patch,
    } = scratch;
    sums.clear();
    sums.resize(n_patches, PatchSums::default());
    // per-axis patch lookup, equivalent to `grid.patch_of`
    col_patch.clear();
    col_patch.extend((0..w).map(|c| match c.checked_sub(grid.u0) {
        Some(d) if d / grid.size < n_cols => d / grid.size,
        _ => OUTSIDE,
    }));
    row_patch.clear();
    row_patch.extend((0..h).map(|r| match r.checked_sub(grid.v0) {
        Some(d) if d / grid.size < n_rows => (d / grid.size) * n_cols,
        _ => OUTSIDE,
    }));

    // entries are in pixel order, so each patch accumulates in a fixed order
    let (mut row, mut row_start) = (0u32, 0u32);
    for e in ldp.entries() {
        while e.pixel >= row_start + w {
            row += 1;
            row_start += w;
        }
        let (j, i) = (col_patch[(e.pixel - row_start) as usize], row_patch[row as usize]);
        if i != OUTSIDE && j != OUTSIDE {
            sums[(i + j) as usize].push(mi.at(e.pixel as usize), e.value);
        }
    }

    let mut total = 0.0;
    let mut n_valid = 0;
    for patch in sums.iter() {
        if let Spcc::Value(r) = patch.spcc(grid.min_points) {
            total += 1.0 - r;
            n_valid += 1;
        }
    }
    let loss = if n_valid == 0 {
        NO_VALID_PATCH_LOSS
    } else {
        total / n_valid as f64
    };
    Ok(StructureLoss {
        loss,
        n_valid,
        n_patches,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect()
    }

    #[test]
    fn identical_signals_correlate_perfectly() {
        let x = ramp(16);
        let sparse: Vec<_> = x.iter().copied().enumerate().collect();
        let r = spcc(&x, &sparse, 15).coefficient();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negated_signals_anticorrelate() {
        let x = ramp(16);
        let sparse: Vec<_> = x.iter().map(|v| -v + 0.5).enumerate().collect();
        let r = spcc(&x, &sparse, 15).coefficient();
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn below_threshold_returns_exactly_one() {
        let x = ramp(16);
        let sparse: Vec<_> = (0..14).map(|k| (k, (k as f64 * 1.7).cos())).collect();
        assert_eq!(spcc(&x, &sparse, 15), Spcc::Sparse);
        assert_eq!(spcc(&x, &sparse, 15).coefficient(), 1.0);
    }

    #[test]
    fn small_case_matches_two_pass_oracle() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 2.0, 3.0, 5.0];
        let sparse: Vec<_> = y.iter().copied().enumerate().collect();
        let expected = oracle::pearson(&x, &y).unwrap();
        let got = spcc(&x, &sparse, 4).coefficient();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        // frozen: 6.5 / sqrt(5 · 8.75) evaluated by hand
        assert!((expected - 0.982_707_629_823_990_8).abs() < 1e-15);
    }

    #[test]
    fn constant_patch_is_degenerate() {
        let x = vec![0.3; 1600];
        let sparse: Vec<_> = (0..1600).map(|k| (k, (k as f64 * 0.01).sin())).collect();
        assert_eq!(spcc(&x, &sparse, 15), Spcc::Degenerate);
        let x = ramp(1600);
        let sparse: Vec<_> = (0..1600).map(|k| (k, 0.7)).collect();
        assert_eq!(spcc(&x, &sparse, 15), Spcc::Degenerate);
    }

    #[test]
    fn grid_validation() {
        assert!(PatchGrid::new(0, 0, 1, 15).is_err());
        assert!(PatchGrid::new(0, 0, 40, 1).is_err());
        assert!(PatchGrid::new(40, 0, 40, 15).is_err());
        assert!(PatchGrid::new(20, 20, 40, 15).is_ok());
    }

    fn random_mi(rng: &mut ChaCha8Rng, w: u32, h: u32) -> DenseImage {
        DenseImage::from_fn(w, h, |_, _| rng.gen()).unwrap()
    }

    #[test]
    fn ldp_sampled_from_mi_gives_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mi = random_mi(&mut rng, 80, 80);
        let ldp = SparseRaster::from_entries(
            80,
            80,
            (0..80)
                .flat_map(|r| (0..80).map(move |c| (c, r)))
                .filter(|&(c, r)| (c + 3 * r) % 4 == 0)
                .map(|(c, r)| (c, r, 0.2 + 0.5 * mi.get(c, r))),
        )
        .unwrap();
        let grid = PatchGrid::new(0, 0, 20, 15).unwrap();
        let s = structure_loss(&mi, &ldp, &grid).unwrap();
        assert_eq!(s.n_valid, 16);
        assert!(s.loss.abs() < 1e-12);
    }

    #[test]
    fn empty_ldp_gives_sentinel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mi = random_mi(&mut rng, 40, 40);
        let grid = PatchGrid::new(0, 0, 20, 15).unwrap();
        let s = structure_loss(&mi, &SparseRaster::empty(40, 40), &grid).unwrap();
        assert_eq!((s.loss, s.n_valid), (2.0, 0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mi = DenseImage::constant(40, 40, 0.5).unwrap();
        let grid = PatchGrid::new(0, 0, 20, 15).unwrap();
        assert!(structure_loss(&mi, &SparseRaster::empty(40, 41), &grid).is_err());
    }

    /// Patch-loop oracle: walks every patch, collects its samples in pixel
    /// order, and averages `1 − r` with the two-pass Pearson.
    fn brute_force_loss(mi: &DenseImage, ldp: &SparseRaster, grid: &PatchGrid) -> (f64, usize) {
        let (w, h) = (mi.width(), mi.height());
        let n_h = (h - grid.v0) / grid.size;
        let n_w = (w - grid.u0) / grid.size;
        let mut total = 0.0;
        let mut valid = 0;
        for i in 0..n_h {
            for j in 0..n_w {
                let (mut xs, mut ys) = (vec![], vec![]);
                for r in grid.v0 + i * grid.size..grid.v0 + (i + 1) * grid.size {
                    for c in grid.u0 + j * grid.size..grid.u0 + (j + 1) * grid.size {
                        if let Some(y) = ldp.get(c, r) {
                            xs.push(mi.get(c, r));
                            ys.push(y);
                        }
                    }
                }
                if xs.len() >= grid.min_points {
                    if let Some(r) = oracle::pearson(&xs, &ys) {
                        total += 1.0 - r;
                        valid += 1;
                    }
                }
            }
        }
        if valid == 0 {
            (2.0, 0)
        } else {
            (total / valid as f64, valid)
        }
    }

    #[test]
    fn random_scene_matches_patch_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mi = random_mi(&mut rng, 120, 120);
        let mut entries = vec![];
        for r in 0..120 {
            for c in 0..120 {
                // density varies by region so some patches fall below P
                let density = if c < 40 && r < 40 { 0.005 } else { 0.08 };
                if rng.gen_bool(density) {
                    entries.push((c, r, rng.gen_range(0.01..1.0)));
                }
            }
        }
        let ldp = SparseRaster::from_entries(120, 120, entries).unwrap();
        for grid in [
            PatchGrid::new(0, 0, 40, 15).unwrap(),
            PatchGrid::new(20, 20, 40, 15).unwrap(),
        ] {
            let s = structure_loss(&mi, &ldp, &grid).unwrap();
            let (expected, valid) = brute_force_loss(&mi, &ldp, &grid);
            assert_eq!(s.n_valid, valid);
            assert!((s.loss - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn partition_ignores_remainders() {
        let grid = PatchGrid::new(0, 0, 40, 15).unwrap();
        assert_eq!((grid.rows(119), grid.cols(130)), (2, 3));
        assert_eq!(grid.patch_of(125, 0, 130, 119), None);
        assert_eq!(grid.patch_of(119, 0, 130, 119), Some(2));
        assert_eq!(grid.patch_of(0, 80, 130, 119), None);
        assert_eq!(grid.patch_of(45, 41, 130, 119), Some(4));
        let offset = PatchGrid::new(20, 20, 40, 15).unwrap();
        assert_eq!(offset.patch_of(19, 30, 130, 119), None);
        assert_eq!((offset.rows(119), offset.cols(130)), (2, 2));
    }

    proptest! {
        #[test]
        fn affine_invariance_and_sign_flip(
            seed in any::<u64>(),
            a in prop_oneof![0.05f64..5.0, -5.0f64..-0.05],
            b in -2.0f64..2.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..64).map(|_| rng.gen()).collect();
            let mut sparse: Vec<(usize, f64)> = Vec::new();
            for k in 0..64 {
                if rng.gen_bool(0.5) {
                    sparse.push((k, rng.gen()));
                }
            }
            let base = spcc(&x, &sparse, 15);
            let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let moved = spcc(&xt, &sparse, 15);
            match (base, moved) {
                (Spcc::Value(r0), Spcc::Value(r1)) => {
                    let expected = if a > 0.0 { r0 } else { -r0 };
                    prop_assert!((r1 - expected).abs() < 1e-9);
                }
                (Spcc::Sparse, Spcc::Sparse) => {}
                other => prop_assert!(false, "validity changed: {:?}", other),
            }
        }

        #[test]
        fn loss_is_bounded(seed in any::<u64>(), density in 0.0f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mi = random_mi(&mut rng, 60, 50);
            let mut entries = vec![];
            for r in 0..50 {
                for c in 0..60 {
                    if rng.gen_bool(density) {
                        entries.push((c, r, rng.gen_range(0.01..1.0)));
                    }
                }
            }
            let ldp = SparseRaster::from_entries(60, 50, entries).unwrap();
            let grid = PatchGrid::new(0, 0, 10, 4).unwrap();
            let s = structure_loss(&mi, &ldp, &grid).unwrap();
            prop_assert!((0.0..=2.0).contains(&s.loss));
            prop_assert!(s.n_valid <= 30 && s.n_patches == 30);
        }
    }
}
