//! Splice fabrication (donor edit, crop, paste) and dataset construction.

mod dataset;
mod manifest;

pub use dataset::{
    build_dataset, group_split, plan_dataset, Blueprint, DatasetKind, OpSpec, Plan, PlannedRecord, PoolProduct, TileRef,
    SD1_OPS, SD1_SIDES, SD2_OPS, SD2_SIDES,
};
pub use manifest::{DatasetManifest, ManifestLine, PristineEntry};

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::editops::{apply_edit, EditDescriptor, EditKind};
use crate::raster::{Grid, TamperMask, Tile};
use crate::{Error, Result};

/// Smallest crop side drawn when `max_side` allows it.
pub const MIN_CROP_SIDE: usize = 128;
const CROP_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpliceMode {
    Inter,
    Intra,
}

impl SpliceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SpliceMode::Inter => "inter",
            SpliceMode::Intra => "intra",
        }
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }
}

/// One manifest entry describing a spliced tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpliceRecord {
    pub id: String,
    /// Operation label used to group results (e.g. `resize_2`).
    pub operation: String,
    pub spliced_path: PathBuf,
    pub mask_path: PathBuf,
    pub target_path: PathBuf,
    pub donor_tile: String,
    pub target_tile: String,
    pub donor_product: String,
    pub target_product: String,
    pub edit: EditDescriptor,
    /// Pasted area in the target.
    pub region: Region,
    /// Top-left corner of the crop inside the edited donor.
    pub donor_origin: (usize, usize),
    pub max_side: usize,
    pub mode: SpliceMode,
}

/// Result of [`make_splice`].
#[derive(Debug, Clone)]
pub struct Splice {
    pub tile: Tile,
    pub mask: TamperMask,
    pub region: Region,
    pub donor_origin: (usize, usize),
    pub mode: SpliceMode,
}

/// Apply `edit` to the donor in normalized space and map it back with the
/// donor's own scale. `none` returns the donor pixels untouched.
pub fn edit_donor(donor: &Tile, edit: &EditDescriptor) -> Result<Grid> {
    if edit.validate()? == EditKind::None {
        return Ok(donor.pixels().clone());
    }
    let edited = apply_edit(&donor.normalize(), edit)?;
    Ok(edited.denormalize())
}

/// Paste `src[donor_origin .. + size]` into a copy of `target` at `region`.
pub fn splice_at(src: &Grid, donor_origin: (usize, usize), target: &Tile, region: Region) -> Result<(Tile, TamperMask)> {
    let crop = src.crop(donor_origin.0, donor_origin.1, region.height, region.width)?;
    let mut pixels = target.pixels().clone();
    pixels.paste(&crop, region.row, region.col)?;
    let mask = TamperMask::rect(
        target.height(),
        target.width(),
        region.row,
        region.col,
        region.height,
        region.width,
    )?;
    let mut prov = target.provenance().to_vec();
    prov.push(format!("splice:{}:{}x{}@{},{}", src.height(), region.height, region.width, region.row, region.col));
    Ok((Tile::new(pixels, target.product_id(), prov)?, mask))
}

/// Edit the donor, take a random crop of at most `max_side` per dimension
/// and paste it at a uniformly random valid position in the target.
///
/// Crop sides are drawn uniformly from `[min(128, max_side), max_side]`.
pub fn make_splice(donor: &Tile, target: &Tile, edit: &EditDescriptor, max_side: usize, seed: u64) -> Result<Splice> {
    if max_side == 0 || max_side > target.height() || max_side > target.width() {
        return Err(Error::Sizing(format!(
            "max side {max_side} does not fit a {}x{} target",
            target.height(),
            target.width()
        )));
    }
    let edited = edit_donor(donor, edit)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = MIN_CROP_SIDE.min(max_side);
    for _ in 0..CROP_ATTEMPTS {
        let h = rng.random_range(lo..=max_side).min(edited.height());
        let w = rng.random_range(lo..=max_side).min(edited.width());
        if h == 0 || w == 0 {
            continue;
        }
        let donor_origin = (
            rng.random_range(0..=edited.height() - h),
            rng.random_range(0..=edited.width() - w),
        );
        let region = Region {
            row: rng.random_range(0..=target.height() - h),
            col: rng.random_range(0..=target.width() - w),
            height: h,
            width: w,
        };
        let (tile, mask) = splice_at(&edited, donor_origin, target, region)?;
        let mode = if donor.product_id() == target.product_id() {
            SpliceMode::Intra
        } else {
            SpliceMode::Inter
        };
        return Ok(Splice {
            tile,
            mask,
            region,
            donor_origin,
            mode,
        });
    }
    Err(Error::Sizing(format!(
        "no non-empty crop after {CROP_ATTEMPTS} attempts ({}x{} edited donor)",
        edited.height(),
        edited.width()
    )))
}
