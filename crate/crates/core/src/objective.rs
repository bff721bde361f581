//! Combined calibration objective over one or more frames.
//!
//! For a candidate extrinsic each frame is projected and rasterized, then
//!
//! ```text
//! loss = λ₁ · (L_structure(0, 0, S) + L_structure(⌊S/2⌋, ⌊S/2⌋, S)) + λ₂ · L_texture
//! ```
//!
//! and the multi-frame objective is the mean of the per-frame losses.

use std::cell::RefCell;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_points_into, CameraIntrinsics, PointCloud, ProjectedPoint, RigidTransform};
use crate::raster::{equalize_intensity, to_grayscale_equalized, DenseImage, Rasterizer, SparseRaster};
use crate::structure::{structure_loss_with, PatchGrid, StructureScratch};
use crate::texture::{NidWorkspace, DEFAULT_BINS};

/// One frame's preprocessed inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePacket {
    /// Equalized grayscale image.
    pub gi: DenseImage,
    /// Monodepth (relative inverse depth), larger = nearer.
    pub mi: DenseImage,
    /// Intensity-equalized cloud.
    pub cloud: PointCloud,
    pub intrinsics: CameraIntrinsics,
}

impl FramePacket {
    pub fn new(
        gi: DenseImage,
        mi: DenseImage,
        cloud: PointCloud,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self> {
        intrinsics.validate()?;
        if !gi.same_size(&intrinsics) || !mi.same_size(&intrinsics) {
            return Err(Error::DimensionMismatch(format!(
                "grayscale {}x{}, monodepth {}x{}, intrinsics {}x{}",
                gi.width(),
                gi.height(),
                mi.width(),
                mi.height(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        Ok(Self {
            gi,
            mi,
            cloud,
            intrinsics,
        })
    }

    /// Runs the preprocessing: grayscale equalization of the camera image
    /// and intensity equalization of the raw cloud.
    pub fn from_raw(
        image: &RgbImage,
        mi: DenseImage,
        raw_cloud: &PointCloud,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self> {
        let gi = to_grayscale_equalized(image)?;
        let cloud = equalize_intensity(raw_cloud)?;
        Self::new(gi, mi, cloud, intrinsics)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// λ₁, weight of the two structure terms.
    pub lambda_structure: f64,
    /// λ₂, weight of the texture term.
    pub lambda_texture: f64,
    /// Patch side `S`, pixels.
    pub patch_size: u32,
    /// Valid-patch threshold `P`.
    pub min_points: usize,
    /// Histogram bins per signal.
    pub bins: usize,
    pub use_structure: bool,
    pub use_texture: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_structure: 0.2,
            lambda_texture: 1.0,
            patch_size: 40,
            min_points: 15,
            bins: DEFAULT_BINS,
            use_structure: true,
            use_texture: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn structure_only() -> Self {
        Self {
            use_texture: false,
            ..Self::default()
        }
    }

    pub fn texture_only() -> Self {
        Self {
            use_structure: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_structure >= 0.0 && self.lambda_texture >= 0.0) {
            return Err(Error::InvalidParameter(
                "loss weights must be non-negative".into(),
            ));
        }
        if !self.use_structure && !self.use_texture {
            return Err(Error::InvalidParameter(
                "at least one of the structure and texture terms must be enabled".into(),
            ));
        }
        let active = (self.use_structure && self.lambda_structure > 0.0)
            || (self.use_texture && self.lambda_texture > 0.0);
        if !active {
            return Err(Error::InvalidParameter(
                "enabled loss terms all have zero weight".into(),
            ));
        }
        if self.bins < 2 {
            return Err(Error::InvalidParameter("bins must be at least 2".into()));
        }
        self.grids().map(|_| ())
    }

    /// The two overlapping grids: origin `(0, 0)` and `(⌊S/2⌋, ⌊S/2⌋)`.
    pub fn grids(&self) -> Result<[PatchGrid; 2]> {
        let half = self.patch_size / 2;
        Ok([
            PatchGrid::new(0, 0, self.patch_size, self.min_points)?,
            PatchGrid::new(half, half, self.patch_size, self.min_points)?,
        ])
    }
}

/// Loss terms of one frame. Disabled terms read 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTerms {
    /// Structure loss on the grid at `(0, 0)`.
    pub structure_origin: f64,
    /// Structure loss on the grid at `(⌊S/2⌋, ⌊S/2⌋)`.
    pub structure_offset: f64,
    pub texture: f64,
    /// `λ₁ · (structure_origin + structure_offset) + λ₂ · texture`.
    pub total: f64,
    pub n_projected: usize,
    pub n_valid_origin: usize,
    pub n_valid_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean of the per-frame totals.
    pub total: f64,
    pub frames: Vec<FrameTerms>,
}

/// Per-thread scratch buffers for repeated evaluation.
#[derive(Debug, Default)]
pub struct EvalWorkspace {
    projected: Vec<ProjectedPoint>,
    rasterizer: Rasterizer,
    ldp: Option<SparseRaster>,
    lip: Option<SparseRaster>,
    patches: StructureScratch,
    nid: NidWorkspace,
}

impl EvalWorkspace {
    pub fn new() -> Self {
        Self::default()
    }
}

fn evaluate_frame(
    frame: &FramePacket,
    t: &RigidTransform,
    cfg: &ObjectiveConfig,
    grids: &[PatchGrid; 2],
    ws: &mut EvalWorkspace,
) -> Result<FrameTerms> {
    let k = &frame.intrinsics;
    project_points_into(&frame.cloud, t, k, &mut ws.projected);
    let ldp = ws
        .ldp
        .get_or_insert_with(|| SparseRaster::empty(k.width, k.height));
    let lip = ws
        .lip
        .get_or_insert_with(|| SparseRaster::empty(k.width, k.height));
    ws.rasterizer
        .rasterize_into(&ws.projected, k.width, k.height, ldp, lip);

    let mut terms = FrameTerms {
        structure_origin: 0.0,
        structure_offset: 0.0,
        texture: 0.0,
        total: 0.0,
        n_projected: ws.projected.len(),
        n_valid_origin: 0,
        n_valid_offset: 0,
    };
    if cfg.use_structure {
        let a = structure_loss_with(&frame.mi, ldp, &grids[0], &mut ws.patches)?;
        let b = structure_loss_with(&frame.mi, ldp, &grids[1], &mut ws.patches)?;
        terms.structure_origin = a.loss;
        terms.structure_offset = b.loss;
        terms.n_valid_origin = a.n_valid;
        terms.n_valid_offset = b.n_valid;
    }
    if cfg.use_texture {
        terms.texture = ws.nid.nid(&frame.gi, lip, cfg.bins)?;
    }
    terms.total = cfg.lambda_structure * (terms.structure_origin + terms.structure_offset)
        + cfg.lambda_texture * terms.texture;
    Ok(terms)
}

/// Evaluates the objective at `t` over all frames.
pub fn evaluate(
    frames: &[FramePacket],
    t: &RigidTransform,
    cfg: &ObjectiveConfig,
) -> Result<Evaluation> {
    evaluate_with(frames, t, cfg, &mut EvalWorkspace::new())
}

pub fn evaluate_with(
    frames: &[FramePacket],
    t: &RigidTransform,
    cfg: &ObjectiveConfig,
    ws: &mut EvalWorkspace,
) -> Result<Evaluation> {
    if frames.is_empty() {
        return Err(Error::NoFrames);
    }
    cfg.validate()?;
    let grids = cfg.grids()?;
    let per_frame = frames
        .iter()
        .map(|f| evaluate_frame(f, t, cfg, &grids, ws))
        .collect::<Result<Vec<_>>>()?;
    let total = per_frame.iter().map(|f| f.total).sum::<f64>() / per_frame.len() as f64;
    Ok(Evaluation {
        total,
        frames: per_frame,
    })
}

/// Anything the search can minimize over extrinsics.
pub trait PoseCost: Sync {
    fn cost(&self, t: &RigidTransform) -> f64;
}

impl<F: Fn(&RigidTransform) -> f64 + Sync> PoseCost for F {
    fn cost(&self, t: &RigidTransform) -> f64 {
        self(t)
    }
}

thread_local! {
    static WORKSPACE: RefCell<EvalWorkspace> = RefCell::new(EvalWorkspace::new());
}

/// A validated frame set plus configuration, usable as a [`PoseCost`].
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    frames: &'a [FramePacket],
    cfg: ObjectiveConfig,
}

impl<'a> Objective<'a> {
    pub fn new(frames: &'a [FramePacket], cfg: ObjectiveConfig) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::NoFrames);
        }
        cfg.validate()?;
        Ok(Self { frames, cfg })
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }

    pub fn frames(&self) -> &'a [FramePacket] {
        self.frames
    }

    pub fn evaluate(&self, t: &RigidTransform) -> Evaluation {
        WORKSPACE.with(|ws| {
            evaluate_with(self.frames, t, &self.cfg, &mut ws.borrow_mut())
                .expect("inputs validated at construction")
        })
    }

    pub fn with_config(&self, cfg: ObjectiveConfig) -> Result<Objective<'a>> {
        Objective::new(self.frames, cfg)
    }
}

impl PoseCost for Objective<'_> {
    fn cost(&self, t: &RigidTransform) -> f64 {
        self.evaluate(t).total
    }
}
