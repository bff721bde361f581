//! Normalized information distance between the equalized grayscale image and
//! the LiDAR intensity projection.
//!
//! Only pixels that carry a LiDAR sample contribute. Both signals live in
//! `[0, 1]` and are binned into `B` uniform bins; entropies use the natural
//! logarithm with `0 · log 0 = 0`:
//!
//! ```text
//! MI(X; Y)  = H(X) + H(Y) − H(X, Y)
//! NID(X, Y) = 1 − MI(X; Y) / H(X, Y)
//! ```

use crate::error::{Error, Result};
use crate::raster::{DenseImage, SparseRaster};

pub const DEFAULT_BINS: usize = 256;

/// Uniform bin of a `[0, 1]` value; 1.0 lands in the top bin.
#[inline]
pub fn bin_index(value: f64, bins: usize) -> usize {
    ((value * bins as f64) as usize).min(bins - 1)
}

/// Computes `ln(n) − Σ c·ln(c) / n` over nonzero counts. Equal counts are
/// grouped and summed in ascending count order, so the result depends only on
/// the multiset of counts and not on bin order.
#[derive(Debug, Default)]
struct EntropyAccumulator {
    multiplicity: Vec<u64>,
    distinct: Vec<u64>,
}

impl EntropyAccumulator {
    fn entropy(&mut self, counts: impl Iterator<Item = u64>, total: u64) -> f64 {
        if total == 0 {
            return 0.0;
        }
        if self.multiplicity.len() <= total as usize {
            self.multiplicity.resize(total as usize + 1, 0);
        }
        self.distinct.clear();
        for c in counts.filter(|&c| c > 0) {
            let m = &mut self.multiplicity[c as usize];
            if *m == 0 {
                self.distinct.push(c);
            }
            *m += 1;
        }
        self.distinct.sort_unstable();
        let mut acc = 0.0;
        for &c in &self.distinct {
            let m = std::mem::take(&mut self.multiplicity[c as usize]);
            let cf = c as f64;
            acc += m as f64 * (cf * cf.ln());
        }
        let n = total as f64;
        (n.ln() - acc / n).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entropies {
    pub x: f64,
    pub y: f64,
    pub joint: f64,
}

impl Entropies {
    pub fn mutual_information(&self) -> f64 {
        self.x + self.y - self.joint
    }

    /// Normalized information distance; 1 when the joint entropy vanishes.
    pub fn nid(&self) -> f64 {
        if self.joint <= 0.0 {
            return 1.0;
        }
        (1.0 - self.mutual_information() / self.joint).clamp(0.0, 1.0)
    }
}

/// `B×B` joint counts of (grayscale bin, intensity bin), row = grayscale.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    bins: usize,
    counts: Vec<u64>,
    total: u64,
}

impl JointHistogram {
    pub fn build(gi: &DenseImage, lip: &SparseRaster, bins: usize) -> Result<Self> {
        check_inputs(gi, lip, bins)?;
        let mut counts = vec![0u64; bins * bins];
        for e in lip.entries() {
            let bx = bin_index(gi.at(e.pixel as usize), bins);
            let by = bin_index(e.value, bins);
            counts[bx * bins + by] += 1;
        }
        Ok(Self {
            bins,
            counts,
            total: lip.len() as u64,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, x_bin: usize, y_bin: usize) -> u64 {
        self.counts[x_bin * self.bins + y_bin]
    }

    /// Grayscale marginal (row sums).
    pub fn marginal_x(&self) -> Vec<u64> {
        self.counts
            .chunks(self.bins)
            .map(|row| row.iter().sum())
            .collect()
    }

    /// Intensity marginal (column sums).
    pub fn marginal_y(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.bins];
        for row in self.counts.chunks(self.bins) {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    /// Swaps the roles of the two signals.
    pub fn transposed(&self) -> Self {
        let b = self.bins;
        let mut counts = vec![0u64; b * b];
        for x in 0..b {
            for y in 0..b {
                counts[y * b + x] = self.counts[x * b + y];
            }
        }
        Self {
            bins: b,
            counts,
            total: self.total,
        }
    }

    pub fn entropies(&self) -> Entropies {
        let mut acc = EntropyAccumulator::default();
        Entropies {
            x: acc.entropy(self.marginal_x().into_iter(), self.total),
            y: acc.entropy(self.marginal_y().into_iter(), self.total),
            joint: acc.entropy(self.counts.iter().copied(), self.total),
        }
    }

    pub fn nid(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        self.entropies().nid()
    }
}

fn check_inputs(gi: &DenseImage, lip: &SparseRaster, bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!(
            "histogram needs at least 2 bins, got {bins}"
        )));
    }
    if gi.width() != lip.width() || gi.height() != lip.height() {
        return Err(Error::DimensionMismatch(format!(
            "grayscale {}x{} vs intensity projection {}x{}",
            gi.width(),
            gi.height(),
            lip.width(),
            lip.height()
        )));
    }
    Ok(())
}

/// NID between the grayscale image and the intensity projection.
pub fn nid(gi: &DenseImage, lip: &SparseRaster, bins: usize) -> Result<f64> {
    Ok(JointHistogram::build(gi, lip, bins)?.nid())
}

/// Scratch space for repeated NID evaluation. Only touched joint bins are
/// visited; results match [`JointHistogram::nid`] bit for bit.
#[derive(Debug, Default)]
pub struct NidWorkspace {
    joint: Vec<u64>,
    touched: Vec<u32>,
    mx: Vec<u64>,
    my: Vec<u64>,
    acc: EntropyAccumulator,
}

impl NidWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nid(&mut self, gi: &DenseImage, lip: &SparseRaster, bins: usize) -> Result<f64> {
        check_inputs(gi, lip, bins)?;
        if lip.is_empty() {
            return Ok(1.0);
        }
        if self.joint.len() != bins * bins {
            self.joint = vec![0; bins * bins];
        }
        self.mx.clear();
        self.mx.resize(bins, 0);
        self.my.clear();
        self.my.resize(bins, 0);
        self.touched.clear();

        for e in lip.entries() {
            let bx = bin_index(gi.at(e.pixel as usize), bins);
            let by = bin_index(e.value, bins);
            let idx = bx * bins + by;
            if self.joint[idx] == 0 {
                self.touched.push(idx as u32);
            }
            self.joint[idx] += 1;
            self.mx[bx] += 1;
            self.my[by] += 1;
        }

        let total = lip.len() as u64;
        let joint = &self.joint;
        let h = Entropies {
            x: self.acc.entropy(self.mx.iter().copied(), total),
            y: self.acc.entropy(self.my.iter().copied(), total),
            joint: self.acc.entropy(self.touched.iter().map(|&i| joint[i as usize]), total),
        };
        for &i in &self.touched {
            self.joint[i as usize] = 0;
        }
        Ok(h.nid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    /// Entropy straight from the definition, `−Σ p ln p`, with hash-map counts.
    fn oracle_nid(gi: &DenseImage, lip: &SparseRaster, bins: usize) -> f64 {
        let bin = |v: f64| ((v * bins as f64).floor() as usize).min(bins - 1);
        let mut jx: HashMap<usize, f64> = HashMap::new();
        let mut jy: HashMap<usize, f64> = HashMap::new();
        let mut jxy: HashMap<(usize, usize), f64> = HashMap::new();
        let mut n = 0.0;
        for (c, r, y) in lip.iter() {
            let (bx, by) = (bin(gi.get(c, r)), bin(y));
            *jx.entry(bx).or_default() += 1.0;
            *jy.entry(by).or_default() += 1.0;
            *jxy.entry((bx, by)).or_default() += 1.0;
            n += 1.0;
        }
        if n == 0.0 {
            return 1.0;
        }
        let h = |counts: Vec<f64>| -> f64 {
            -counts
                .iter()
                .map(|c| {
                    let p = c / n;
                    p * p.ln()
                })
                .sum::<f64>()
        };
        let hx = h(jx.into_values().collect());
        let hy = h(jy.into_values().collect());
        let hxy = h(jxy.into_values().collect());
        if hxy == 0.0 {
            return 1.0;
        }
        1.0 - (hx + hy - hxy) / hxy
    }

    fn random_pair(rng: &mut ChaCha8Rng, w: u32, h: u32, density: f64) -> (DenseImage, SparseRaster) {
        let gi = DenseImage::from_fn(w, h, |_, _| rng.gen()).unwrap();
        let mut entries = vec![];
        for r in 0..h {
            for c in 0..w {
                if rng.gen_bool(density) {
                    // correlate with gi half the time so MI is nontrivial
                    let y = if rng.gen_bool(0.5) {
                        (gi.get(c, r) * 0.8 + 0.1).min(1.0)
                    } else {
                        rng.gen()
                    };
                    entries.push((c, r, y));
                }
            }
        }
        (gi, SparseRaster::from_entries(w, h, entries).unwrap())
    }

    #[test]
    fn empty_lip_has_zero_total() {
        let gi = DenseImage::constant(4, 4, 0.5).unwrap();
        let hist = JointHistogram::build(&gi, &SparseRaster::empty(4, 4), 16).unwrap();
        assert_eq!(hist.total(), 0);
        assert_eq!(hist.nid(), 1.0);
    }

    #[test]
    fn corner_binning() {
        let gi = DenseImage::constant(1, 1, 0.0).unwrap();
        let lip = SparseRaster::from_entries(1, 1, [(0, 0, 1.0)]).unwrap();
        let hist = JointHistogram::build(&gi, &lip, 256).unwrap();
        assert_eq!(hist.total(), 1);
        assert_eq!(hist.count(0, 255), 1);
    }

    #[test]
    fn marginals_match_per_image_histograms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (gi, lip) = random_pair(&mut rng, 64, 64, 0.3);
        let hist = JointHistogram::build(&gi, &lip, 16).unwrap();
        let mut hx = vec![0u64; 16];
        let mut hy = vec![0u64; 16];
        for (c, r, y) in lip.iter() {
            hx[((gi.get(c, r) * 16.0).floor() as usize).min(15)] += 1;
            hy[((y * 16.0).floor() as usize).min(15)] += 1;
        }
        assert_eq!(hist.marginal_x(), hx);
        assert_eq!(hist.marginal_y(), hy);
        assert_eq!(hist.marginal_x().iter().sum::<u64>(), hist.total());
    }

    #[test]
    fn identical_signals_have_zero_distance() {
        let gi = DenseImage::from_fn(8, 8, |c, r| ((c * 8 + r) % 5) as f64 / 4.0).unwrap();
        let lip = SparseRaster::from_entries(
            8,
            8,
            (0..8).flat_map(|r| (0..8).map(move |c| (c, r))).filter(|(c, r)| (c + r) % 2 == 0).map(|(c, r)| (c, r, gi.get(c, r))),
        )
        .unwrap();
        assert_eq!(nid(&gi, &lip, 256).unwrap(), 0.0);
    }

    #[test]
    fn independent_signals_have_unit_distance() {
        // X bins {0, 0, 1, 1}, Y bins {0, 1, 0, 1}
        let gi = DenseImage::new(4, 1, vec![0.1, 0.1, 0.9, 0.9]).unwrap();
        let lip = SparseRaster::from_entries(4, 1, [(0, 0, 0.1), (1, 0, 0.9), (2, 0, 0.1), (3, 0, 0.9)]).unwrap();
        let h = JointHistogram::build(&gi, &lip, 2).unwrap().entropies();
        assert!((h.x - 2f64.ln()).abs() < 1e-15);
        assert!((h.y - 2f64.ln()).abs() < 1e-15);
        assert!((h.joint - 4f64.ln()).abs() < 1e-15);
        assert!(h.mutual_information().abs() < 1e-15);
        assert!((nid(&gi, &lip, 2).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_case_matches_entropy_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (gi, lip) = random_pair(&mut rng, 64, 64, 0.25);
        let got = nid(&gi, &lip, 16).unwrap();
        let expected = oracle_nid(&gi, &lip, 16);
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn workspace_is_bit_identical_to_histogram() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ws = NidWorkspace::new();
        for bins in [16, 256] {
            for _ in 0..5 {
                let (gi, lip) = random_pair(&mut rng, 40, 30, 0.2);
                let a = nid(&gi, &lip, bins).unwrap();
                let b = ws.nid(&gi, &lip, bins).unwrap();
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn size_mismatch_and_bad_bins() {
        let gi = DenseImage::constant(4, 4, 0.5).unwrap();
        assert!(nid(&gi, &SparseRaster::empty(4, 5), 16).is_err());
        assert!(nid(&gi, &SparseRaster::empty(4, 4), 1).is_err());
    }

    proptest! {
        #[test]
        fn bounds_and_symmetry(seed in any::<u64>(), density in 0.01f64..0.6, bins in 2usize..64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (gi, lip) = random_pair(&mut rng, 20, 20, density);
            let hist = JointHistogram::build(&gi, &lip, bins).unwrap();
            let h = hist.entropies();
            let mi = h.mutual_information();
            prop_assert!(mi >= -1e-12 && mi <= h.x.min(h.y) + 1e-12);
            let d = hist.nid();
            prop_assert!((0.0..=1.0).contains(&d));
            let ht = hist.transposed().entropies();
            prop_assert_eq!(ht.joint.to_bits(), h.joint.to_bits());
            prop_assert_eq!(ht.mutual_information().to_bits(), mi.to_bits());
            prop_assert_eq!(hist.transposed().nid().to_bits(), d.to_bits());
        }

        #[test]
        fn bin_permutation_invariance(seed in any::<u64>()) {
            // reversing intensity bins is a bin-label permutation
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (gi, lip) = random_pair(&mut rng, 24, 24, 0.3);
            let bins = 8;
            let flipped = SparseRaster::from_entries(24, 24, lip.iter().map(|(c, r, y)| {
                let b = bin_index(y, bins);
                (c, r, ((bins - 1 - b) as f64 + 0.5) / bins as f64)
            })).unwrap();
            let a = nid(&gi, &lip, bins).unwrap();
            let b = nid(&gi, &flipped, bins).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
