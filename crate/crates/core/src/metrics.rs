//! Calibration error metrics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_degrees, RigidTransform};

/// Truncation caps used for error CDF plots: 1° rotation, 0.2 m translation.
pub const CDF_ROTATION_CAP_DEG: f64 = 1.0;
pub const CDF_TRANSLATION_CAP_M: f64 = 0.2;

/// Per-axis and magnitude errors between a ground-truth and an estimated
/// extrinsic. Rotation in degrees (roll, pitch, yaw), translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationErrors {
    pub e_r_vec: [f64; 3],
    pub e_r: f64,
    /// `|t − t̂|`, the LiDAR origin in camera coordinates.
    pub e_t_plus_vec: [f64; 3],
    pub e_t_plus: f64,
    /// `|R⁻¹t − R̂⁻¹t̂|`.
    pub e_t_minus_vec: [f64; 3],
    pub e_t_minus: f64,
}

fn norm(v: [f64; 3]) -> f64 {
    Vector3::from(v).norm()
}

pub fn compute_errors(truth: &RigidTransform, estimate: &RigidTransform) -> CalibrationErrors {
    let a = truth.euler().to_array();
    let b = estimate.euler().to_array();
    let e_r_vec = [0, 1, 2].map(|i| wrap_degrees(a[i] - b[i]).abs());

    let plus = (truth.translation - estimate.translation).abs();
    let minus = (truth.rotation.transpose() * truth.translation
        - estimate.rotation.transpose() * estimate.translation)
        .abs();
    let e_t_plus_vec: [f64; 3] = plus.into();
    let e_t_minus_vec: [f64; 3] = minus.into();
    CalibrationErrors {
        e_r_vec,
        e_r: norm(e_r_vec),
        e_t_plus_vec,
        e_t_plus: norm(e_t_plus_vec),
        e_t_minus_vec,
        e_t_minus: norm(e_t_minus_vec),
    }
}

impl CalibrationErrors {
    /// Row in roll, pitch, yaw, x, y, z order using `e_t⁺` components.
    pub fn table_row(&self) -> [f64; 6] {
        let [r, p, y] = self.e_r_vec;
        let [x, ty, z] = self.e_t_plus_vec;
        [r, p, y, x, ty, z]
    }

    /// Componentwise mean over a batch, `None` when empty. Magnitudes are
    /// averaged as magnitudes, not recomputed from the averaged vectors.
    pub fn mean(batch: &[CalibrationErrors]) -> Option<CalibrationErrors> {
        if batch.is_empty() {
            return None;
        }
        let n = batch.len() as f64;
        let avg3 = |f: fn(&CalibrationErrors) -> [f64; 3]| {
            let mut s = [0.0; 3];
            for e in batch {
                let v = f(e);
                for k in 0..3 {
                    s[k] += v[k];
                }
            }
            s.map(|x| x / n)
        };
        let avg = |f: fn(&CalibrationErrors) -> f64| batch.iter().map(f).sum::<f64>() / n;
        Some(CalibrationErrors {
            e_r_vec: avg3(|e| e.e_r_vec),
            e_r: avg(|e| e.e_r),
            e_t_plus_vec: avg3(|e| e.e_t_plus_vec),
            e_t_plus: avg(|e| e.e_t_plus),
            e_t_minus_vec: avg3(|e| e.e_t_minus_vec),
            e_t_minus: avg(|e| e.e_t_minus),
        })
    }
}

/// Empirical CDF as `(value, fraction ≤ value)` steps over the distinct
/// sorted values. With `cap`, values above it are clamped onto the cap.
pub fn empirical_cdf(values: &[f64], cap: Option<f64>) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values
        .iter()
        .filter(|x| !x.is_nan())
        .map(|&x| cap.map_or(x, |c| x.min(c)))
        .collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => out.push((*x, frac)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerAngles;
    use proptest::prelude::*;

    fn pose(r: f64, p: f64, y: f64, t: [f64; 3]) -> RigidTransform {
        RigidTransform::from_euler(EulerAngles::new(r, p, y), Vector3::from(t))
    }

    /// Inverse via cofactors, independent of the transpose shortcut.
    fn explicit_inverse(m: &nalgebra::Matrix3<f64>) -> nalgebra::Matrix3<f64> {
        let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)];
        let cof = nalgebra::Matrix3::new(
            c(1, 1, 2, 2), -c(1, 0, 2, 2), c(1, 0, 2, 1),
            -c(0, 1, 2, 2), c(0, 0, 2, 2), -c(0, 0, 2, 1),
            c(0, 1, 1, 2), -c(0, 0, 1, 2), c(0, 0, 1, 1),
        );
        let det = m[(0, 0)] * cof[(0, 0)] + m[(0, 1)] * cof[(0, 1)] + m[(0, 2)] * cof[(0, 2)];
        cof.transpose() / det
    }

    #[test]
    fn identical_transforms_have_zero_error() {
        let t = pose(90.0, 0.0, 90.0, [0.1, -0.2, 0.3]);
        assert_eq!(compute_errors(&t, &t), CalibrationErrors::default());
    }

    #[test]
    fn translation_offset() {
        let a = pose(10.0, 20.0, 30.0, [0.0, 0.0, 0.0]);
        let b = pose(10.0, 20.0, 30.0, [0.1, 0.0, 0.0]);
        let e = compute_errors(&a, &b);
        assert_eq!(e.e_r_vec, [0.0; 3]);
        assert!((e.e_t_plus - 0.1).abs() < 1e-15);
        let expected = (a.rotation.transpose() * Vector3::new(0.1, 0.0, 0.0)).abs();
        for k in 0..3 {
            assert!((e.e_t_minus_vec[k] - expected[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn yaw_wraps_around() {
        let e = compute_errors(&pose(0.0, 0.0, 179.0, [0.0; 3]), &pose(0.0, 0.0, -179.0, [0.0; 3]));
        assert!((e.e_r_vec[2] - 2.0).abs() < 1e-9);
        assert!(e.e_r_vec[0] < 1e-9 && e.e_r_vec[1] < 1e-9);
    }

    #[test]
    fn mean_and_row() {
        let a = compute_errors(&pose(0.0, 0.0, 0.0, [0.0; 3]), &pose(1.0, 0.0, 0.0, [0.1, 0.0, 0.0]));
        let b = compute_errors(&pose(0.0, 0.0, 0.0, [0.0; 3]), &pose(0.0, 3.0, 0.0, [0.0, 0.3, 0.0]));
        let m = CalibrationErrors::mean(&[a, b]).unwrap();
        assert!((m.e_r_vec[0] - 0.5).abs() < 1e-9 && (m.e_r_vec[1] - 1.5).abs() < 1e-9);
        assert!((m.e_r - (a.e_r + b.e_r) / 2.0).abs() < 1e-15);
        assert_eq!(m.table_row()[4], (a.e_t_plus_vec[1] + b.e_t_plus_vec[1]) / 2.0);
        assert!(CalibrationErrors::mean(&[]).is_none());
    }

    #[test]
    fn cdf_shape() {
        let c = empirical_cdf(&[0.3, 0.1, 0.3, 2.0], None);
        assert_eq!(c, vec![(0.1, 0.25), (0.3, 0.75), (2.0, 1.0)]);
        let t = empirical_cdf(&[0.3, 0.1, 5.0, 2.0], Some(1.0));
        assert_eq!(t, vec![(0.1, 0.25), (0.3, 0.5), (1.0, 1.0)]);
        assert!(empirical_cdf(&[], None).is_empty());
    }

    fn any_pose() -> impl Strategy<Value = RigidTransform> {
        (-180.0f64..180.0, -89.0f64..89.0, -180.0f64..180.0, prop::array::uniform3(-2.0f64..2.0))
            .prop_map(|(r, p, y, t)| pose(r, p, y, t))
    }

    proptest! {
        #[test]
        fn matches_explicit_inverse(a in any_pose(), b in any_pose()) {
            let e = compute_errors(&a, &b);
            let oracle = explicit_inverse(&a.rotation) * a.translation - explicit_inverse(&b.rotation) * b.translation;
            for k in 0..3 {
                prop_assert!((e.e_t_minus_vec[k] - oracle[k].abs()).abs() < 1e-12);
            }
            prop_assert!((e.e_r - norm(e.e_r_vec)).abs() < 1e-12);
            prop_assert!(e.e_r_vec.iter().all(|x| (0.0..=180.0).contains(x)));
        }

        #[test]
        fn plus_error_is_symmetric(a in any_pose(), b in any_pose()) {
            prop_assert_eq!(compute_errors(&a, &b).e_t_plus, compute_errors(&b, &a).e_t_plus);
            prop_assert_eq!(compute_errors(&a, &b).e_r_vec, compute_errors(&b, &a).e_r_vec);
        }

        #[test]
        fn cdf_is_monotone(v in prop::collection::vec(0.0f64..3.0, 1..50), capped in any::<bool>()) {
            let c = empirical_cdf(&v, capped.then_some(1.0));
            prop_assert!(c.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
            prop_assert_eq!(c.last().unwrap().1, 1.0);
        }
    }
}
