//! Three-stage coarse-to-fine extrinsic search.
//!
//! 1. Optional rotation grid search around the initial guess.
//! 2. Coarse random search with large angular steps.
//! 3. Fine random search with small angular steps.
//!
//! Each random-search iteration evaluates 216 candidates. Rotations are every
//! combination of the 6-element angle set added to the running best Euler
//! angles; translations are uniform offsets around the *initial* translation.
//! Candidate `i + 108` mirrors candidate `i`: negated angles, same offset.

use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EulerAngles, RigidTransform};
use crate::objective::PoseCost;

pub const CANDIDATES_PER_ITERATION: usize = 216;
pub const MIRROR_OFFSET: usize = CANDIDATES_PER_ITERATION / 2;

pub const COARSE_ANGLES: [f64; 6] = [-0.5, -0.2, -0.1, 0.1, 0.2, 0.5];
pub const FINE_ANGLES: [f64; 6] = [-0.1, -0.04, -0.02, 0.02, 0.04, 0.1];

/// Declared initial rotation error above which the grid stage is enabled.
pub const GRID_GATE_DEGREES: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub grid_enabled: bool,
    /// Grid half-range `A`, degrees.
    pub grid_range_deg: f64,
    pub grid_stride_deg: f64,
    /// Translation half-range `B`, meters.
    pub trans_range_m: f64,
    pub coarse_iters: usize,
    pub fine_iters: usize,
    pub coarse_angles: [f64; 6],
    pub fine_angles: [f64; 6],
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid_enabled: false,
            grid_range_deg: 15.0,
            grid_stride_deg: 1.0,
            trans_range_m: 0.2,
            coarse_iters: 150,
            fine_iters: 150,
            coarse_angles: COARSE_ANGLES,
            fine_angles: FINE_ANGLES,
            seed: 0,
        }
    }
}

impl SearchConfig {
    /// Defaults, with the grid stage switched on iff the declared initial
    /// rotation error exceeds [`GRID_GATE_DEGREES`].
    pub fn for_initial_error(declared_deg: f64) -> Self {
        Self {
            grid_enabled: declared_deg > GRID_GATE_DEGREES,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_angle_set(&self.coarse_angles)?;
        validate_angle_set(&self.fine_angles)?;
        if !(self.trans_range_m.is_finite() && self.trans_range_m >= 0.0) {
            return Err(Error::InvalidParameter(
                "translation range must be finite and non-negative".into(),
            ));
        }
        if self.grid_enabled {
            grid_steps(self.grid_range_deg, self.grid_stride_deg)?;
        }
        Ok(())
    }

    /// Number of objective evaluations the grid stage performs.
    pub fn grid_evaluations(&self) -> Result<usize> {
        let n = 2 * grid_steps(self.grid_range_deg, self.grid_stride_deg)? + 1;
        Ok(n * n * n)
    }
}

/// Angle sets hold six finite values, three negative, closed under negation.
pub fn validate_angle_set(set: &[f64; 6]) -> Result<()> {
    let ok = set.iter().all(|d| d.is_finite() && *d != 0.0)
        && set.iter().filter(|d| **d < 0.0).count() == 3
        && set.iter().all(|d| set.contains(&-d));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "angle set {set:?} must hold 3 nonzero values and their negations"
        )))
    }
}

fn grid_steps(range: f64, stride: f64) -> Result<usize> {
    if !(range.is_finite() && stride.is_finite() && range >= 0.0 && stride > 0.0) {
        return Err(Error::InvalidParameter(
            "grid range must be >= 0 and stride > 0".into(),
        ));
    }
    let steps = (range / stride).round();
    if (steps * stride - range).abs() > 1e-9 * range.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "grid range {range} is not a multiple of stride {stride}"
        )));
    }
    Ok(steps as usize)
}

/// One random-search candidate, as offsets from the running best rotation
/// and from the initial translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub delta_euler: [f64; 3],
    pub delta_translation: Vector3<f64>,
}

/// The 108 angle combinations with a negative first component, in
/// lexicographic order of the set as given.
fn half_combinations(set: &[f64; 6]) -> impl Iterator<Item = [f64; 3]> + '_ {
    set.iter()
        .filter(|a| **a < 0.0)
        .flat_map(move |&a| {
            set.iter()
                .flat_map(move |&b| set.iter().map(move |&c| [a, b, c]))
        })
}

/// Builds one iteration's 216 candidates, drawing 108 translation offsets
/// from `rng`.
pub fn generate_candidates(
    angle_set: &[f64; 6],
    trans_range: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(CANDIDATES_PER_ITERATION);
    for delta_euler in half_combinations(angle_set) {
        let delta_translation = Vector3::from_fn(|_, _| {
            if trans_range > 0.0 {
                rng.gen_range(-trans_range..=trans_range)
            } else {
                0.0
            }
        });
        out.push(Candidate {
            delta_euler,
            delta_translation,
        });
    }
    debug_assert_eq!(out.len(), MIRROR_OFFSET);
    for i in 0..MIRROR_OFFSET {
        let c = out[i];
        out.push(Candidate {
            delta_euler: c.delta_euler.map(|d| -d),
            delta_translation: c.delta_translation,
        });
    }
    out
}

/// A pose with the Euler angles the search perturbs and its loss.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Snapshot {
    pub euler: EulerAngles,
    pub translation: [f64; 3],
    pub loss: f64,
    #[serde(skip)]
    transform: Option<RigidTransform>,
}

/// Compares the serialized fields; the cached exact transform is not part
/// of a snapshot's identity.
impl PartialEq for Snapshot {
    fn eq(&self, other: &Self) -> bool {
        self.euler == other.euler && self.translation == other.translation && self.loss == other.loss
    }
}

impl Snapshot {
    fn at(transform: RigidTransform, euler: EulerAngles, loss: f64) -> Self {
        Self {
            euler,
            translation: transform.translation.into(),
            loss,
            transform: Some(transform),
        }
    }

    fn evaluate(cost: &dyn PoseCost, transform: RigidTransform) -> Self {
        let loss = cost.cost(&transform);
        Self::at(transform, transform.euler(), loss)
    }

    pub fn transform(&self) -> RigidTransform {
        self.transform.unwrap_or_else(|| {
            RigidTransform::from_euler(self.euler, Vector3::from(self.translation))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub best_loss: f64,
    pub euler: EulerAngles,
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub evaluations: usize,
    pub iterations: Vec<IterationRecord>,
    pub seconds: f64,
}

/// Stage snapshots `S0` (initial) to `S3` (final), plus per-stage detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub s0: Snapshot,
    pub s1: Snapshot,
    pub s2: Snapshot,
    pub s3: Snapshot,
    pub grid: Option<StageTrace>,
    pub coarse: StageTrace,
    pub fine: StageTrace,
}

impl SearchTrace {
    pub fn stages(&self) -> [(&'static str, &Snapshot); 4] {
        [
            ("S0", &self.s0),
            ("S1", &self.s1),
            ("S2", &self.s2),
            ("S3", &self.s3),
        ]
    }

    /// Every recorded best loss, in order: S0, grid result, then each
    /// random-search iteration.
    pub fn loss_sequence(&self) -> Vec<f64> {
        let mut out = vec![self.s0.loss, self.s1.loss];
        out.extend(self.coarse.iterations.iter().map(|r| r.best_loss));
        out.extend(self.fine.iterations.iter().map(|r| r.best_loss));
        out
    }

    /// Copy with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        for stage in [t.grid.as_mut(), Some(&mut t.coarse), Some(&mut t.fine)]
            .into_iter()
            .flatten()
        {
            stage.seconds = 0.0;
        }
        t
    }
}

/// Index of the smallest value; NaN never wins and ties keep the lowest
/// index.
fn argmin(losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &l) in losses.iter().enumerate() {
        match best {
            _ if l.is_nan() => {}
            None => best = Some(i),
            Some(b) if l < losses[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

fn evaluate_all(cost: &dyn PoseCost, poses: &[RigidTransform]) -> Vec<f64> {
    poses.par_iter().map(|t| cost.cost(t)).collect()
}

fn grid_offsets(range: f64, stride: f64) -> Result<Vec<f64>> {
    let steps = grid_steps(range, stride)? as i64;
    Ok((-steps..=steps).map(|k| k as f64 * stride).collect())
}

/// Exhaustive rotation search over `[-A, A]³` Euler offsets from `start`,
/// translation held fixed. The zero offset is `start` itself.
pub fn grid_search_rotation(
    cost: &dyn PoseCost,
    start: &Snapshot,
    cfg: &SearchConfig,
) -> Result<(Snapshot, StageTrace)> {
    let timer = Instant::now();
    let offsets = grid_offsets(cfg.grid_range_deg, cfg.grid_stride_deg)?;
    let t0 = start.transform();
    let mut eulers = Vec::with_capacity(offsets.len().pow(3));
    let mut poses = Vec::with_capacity(offsets.len().pow(3));
    for &a in &offsets {
        for &b in &offsets {
            for &c in &offsets {
                let e = start.euler.offset([a, b, c]);
                eulers.push(e);
                poses.push(if a == 0.0 && b == 0.0 && c == 0.0 {
                    t0
                } else {
                    RigidTransform::from_euler(e, t0.translation)
                });
            }
        }
    }
    let losses = evaluate_all(cost, &poses);
    let best = match argmin(&losses) {
        Some(i) if losses[i] < start.loss || start.loss.is_nan() => {
            Snapshot::at(poses[i], eulers[i], losses[i])
        }
        _ => *start,
    };
    let trace = StageTrace {
        evaluations: poses.len(),
        iterations: vec![IterationRecord {
            iteration: 0,
            best_loss: best.loss,
            euler: best.euler,
            translation: best.translation,
        }],
        seconds: timer.elapsed().as_secs_f64(),
    };
    Ok((best, trace))
}

/// Random search stage. Rotations perturb the running best; translations
/// perturb `t_init` only.
pub fn random_search_stage(
    cost: &dyn PoseCost,
    t_init: &RigidTransform,
    start: &Snapshot,
    angle_set: &[f64; 6],
    trans_range: f64,
    iters: usize,
    seed: u64,
) -> Result<(Snapshot, StageTrace)> {
    validate_angle_set(angle_set)?;
    let timer = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = *start;
    let mut records = Vec::with_capacity(iters);
    let mut poses = Vec::with_capacity(CANDIDATES_PER_ITERATION);
    let mut eulers = Vec::with_capacity(CANDIDATES_PER_ITERATION);
    for iteration in 0..iters {
        let candidates = generate_candidates(angle_set, trans_range, &mut rng);
        poses.clear();
        eulers.clear();
        for c in &candidates {
            let e = best.euler.offset(c.delta_euler);
            eulers.push(e);
            poses.push(RigidTransform::from_euler(
                e,
                t_init.translation + c.delta_translation,
            ));
        }
        let losses = evaluate_all(cost, &poses);
        if let Some(i) = argmin(&losses) {
            if losses[i] < best.loss || best.loss.is_nan() {
                best = Snapshot::at(poses[i], eulers[i], losses[i]);
            }
        }
        records.push(IterationRecord {
            iteration,
            best_loss: best.loss,
            euler: best.euler,
            translation: best.translation,
        });
    }
    let trace = StageTrace {
        evaluations: iters * CANDIDATES_PER_ITERATION,
        iterations: records,
        seconds: timer.elapsed().as_secs_f64(),
    };
    Ok((best, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub transform: RigidTransform,
    pub trace: SearchTrace,
}

/// Full pipeline `T0 → [grid] → T1 → coarse → T2 → fine → T3`.
pub fn calibrate(
    cost: &dyn PoseCost,
    t0: &RigidTransform,
    cfg: &SearchConfig,
) -> Result<Calibration> {
    cfg.validate()?;
    let s0 = Snapshot::evaluate(cost, *t0);
    let (s1, grid) = if cfg.grid_enabled {
        let (s, trace) = grid_search_rotation(cost, &s0, cfg)?;
        (s, Some(trace))
    } else {
        (s0, None)
    };
    resume_from_grid(cost, t0, s0, s1, grid, cfg)
}

/// Runs the two random stages from a given post-grid snapshot. Lets callers
/// share one grid result between several searches.
pub fn resume_from_grid(
    cost: &dyn PoseCost,
    t0: &RigidTransform,
    s0: Snapshot,
    s1: Snapshot,
    grid: Option<StageTrace>,
    cfg: &SearchConfig,
) -> Result<Calibration> {
    cfg.validate()?;
    // the grid keeps t0's translation, so t0 is the anchor for both stages
    let t_init = RigidTransform::from_euler(s1.euler, t0.translation);
    let (s2, coarse) = random_search_stage(
        cost,
        &t_init,
        &s1,
        &cfg.coarse_angles,
        cfg.trans_range_m,
        cfg.coarse_iters,
        cfg.seed,
    )?;
    let (s3, fine) = random_search_stage(
        cost,
        &t_init,
        &s2,
        &cfg.fine_angles,
        cfg.trans_range_m,
        cfg.fine_iters,
        cfg.seed.wrapping_add(1),
    )?;
    Ok(Calibration {
        transform: s3.transform(),
        trace: SearchTrace {
            s0,
            s1,
            s2,
            s3,
            grid,
            coarse,
            fine,
        },
    })
}

/// Evaluates `t` once and wraps it as a snapshot.
pub fn snapshot(cost: &dyn PoseCost, t: &RigidTransform) -> Snapshot {
    Snapshot::evaluate(cost, *t)
}
