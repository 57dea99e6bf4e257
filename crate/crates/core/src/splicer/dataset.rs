use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{make_splice, DatasetManifest, PristineEntry, SpliceMode, SpliceRecord};
use crate::editops::EditDescriptor;
use crate::raster::{partition_product, save_mask, save_tile, tile_count, Tile};
use crate::seeds;
use crate::synthgrd::ProductRegistry;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Fed,
    Sd1,
    Sd2,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Fed => "fed",
            DatasetKind::Sd1 => "sd1",
            DatasetKind::Sd2 => "sd2",
        }
    }

    pub fn ops(self) -> &'static [OpSpec] {
        match self {
            DatasetKind::Fed => &[],
            DatasetKind::Sd1 => &SD1_OPS,
            DatasetKind::Sd2 => &SD2_OPS,
        }
    }

    pub fn sides(self) -> &'static [usize] {
        match self {
            DatasetKind::Fed => &[],
            DatasetKind::Sd1 => &SD1_SIDES,
            DatasetKind::Sd2 => &SD2_SIDES,
        }
    }

    pub fn modes(self) -> &'static [SpliceMode] {
        match self {
            DatasetKind::Fed => &[],
            DatasetKind::Sd1 => &[SpliceMode::Inter],
            DatasetKind::Sd2 => &[SpliceMode::Inter, SpliceMode::Intra],
        }
    }

    fn split(self) -> &'static str {
        match self {
            DatasetKind::Fed | DatasetKind::Sd1 => "train",
            DatasetKind::Sd2 => "test",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fed" => Ok(DatasetKind::Fed),
            "sd1" => Ok(DatasetKind::Sd1),
            "sd2" => Ok(DatasetKind::Sd2),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

/// A named operation and how to draw its edit parameters.
#[derive(Clone, Copy)]
pub struct OpSpec {
    pub name: &'static str,
    pub sample: fn(&mut ChaCha8Rng) -> EditDescriptor,
}

impl fmt::Debug for OpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

fn angle(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-45.0..=45.0)
}

fn variance(rng: &mut ChaCha8Rng, hi: f64) -> f64 {
    rng.random_range(0.0..hi)
}

/// Factor in the open interval `(1, 1.5)`.
fn small_factor(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let f = rng.random_range(1.0..1.5);
        if f > 1.0 {
            return f;
        }
    }
}

pub const SD1_OPS: [OpSpec; 8] = [
    OpSpec { name: "none", sample: |_| EditDescriptor::none() },
    OpSpec { name: "rotate", sample: |r| EditDescriptor::rotate(angle(r)) },
    OpSpec { name: "resize_1.5", sample: |_| EditDescriptor::resize(1.5) },
    OpSpec { name: "resize_2", sample: |_| EditDescriptor::resize(2.0) },
    OpSpec { name: "resize_2.5", sample: |_| EditDescriptor::resize(2.5) },
    OpSpec { name: "rotate_resize_1.5", sample: |r| EditDescriptor::rotate_resize(angle(r), 1.5) },
    OpSpec { name: "rotate_resize_2", sample: |r| EditDescriptor::rotate_resize(angle(r), 2.0) },
    OpSpec { name: "rotate_resize_2.5", sample: |r| EditDescriptor::rotate_resize(angle(r), 2.5) },
];

pub const SD2_OPS: [OpSpec; 7] = [
    OpSpec { name: "none", sample: |_| EditDescriptor::none() },
    OpSpec { name: "gaussian_noise", sample: |r| EditDescriptor::gaussian_noise(variance(r, 0.1), r.random()) },
    OpSpec { name: "laplacian_noise", sample: |r| EditDescriptor::laplacian_noise(variance(r, 0.1), r.random()) },
    OpSpec { name: "average_blur", sample: |_| EditDescriptor::average_blur() },
    OpSpec { name: "median_blur", sample: |_| EditDescriptor::median_blur() },
    OpSpec { name: "rotate_resize", sample: |r| EditDescriptor::rotate_resize(angle(r), small_factor(r)) },
    OpSpec { name: "speckle_noise", sample: |r| EditDescriptor::speckle_noise(variance(r, 0.3), r.random()) },
];

pub const SD1_SIDES: [usize; 2] = [128, 256];
pub const SD2_SIDES: [usize; 5] = [128, 160, 192, 224, 256];

/// Dataset construction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blueprint {
    pub kind: DatasetKind,
    /// Records per operation (split evenly between modes for SD2).
    pub per_op: usize,
    pub seed: u64,
    pub tile_side: usize,
    /// Leading products reserved for FED/SD1; `None` takes the first half of the pool.
    pub fed_products: Option<usize>,
    /// How many records may share one target tile.
    pub max_target_uses: usize,
}

impl Blueprint {
    pub fn new(kind: DatasetKind, per_op: usize, seed: u64) -> Self {
        Self {
            kind,
            per_op,
            seed,
            tile_side: 1024,
            fed_products: None,
            max_target_uses: 2,
        }
    }

    /// Full-scale sizes: 200 records per SD1 operation,
    /// 1000 per SD2 operation.
    pub fn full(kind: DatasetKind, seed: u64) -> Self {
        let per_op = match kind {
            DatasetKind::Fed => 0,
            DatasetKind::Sd1 => 200,
            DatasetKind::Sd2 => 1000,
        };
        Self::new(kind, per_op, seed)
    }

    pub fn expected_records(&self) -> usize {
        self.kind.ops().len() * self.per_op
    }
}

/// Product id and tile count, enough to plan a dataset without pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolProduct {
    pub product_id: String,
    pub tiles: usize,
}

/// Tile `index` (row-major) of pool product `product`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileRef {
    pub product: usize,
    pub index: usize,
}

impl TileRef {
    pub fn id(&self, pool: &[PoolProduct]) -> String {
        format!("{}#{:04}", pool[self.product].product_id, self.index)
    }
}

/// Product indices for (FED/SD1, SD2).
pub fn group_split(pool_len: usize, fed_products: Option<usize>) -> (Vec<usize>, Vec<usize>) {
    let k = fed_products.unwrap_or(pool_len.div_ceil(2)).min(pool_len);
    ((0..k).collect(), (k..pool_len).collect())
}

/// FED takes the first half (rounded up) of each product's tiles, SD1 the rest.
fn fed_range(tiles: usize) -> std::ops::Range<usize> {
    0..tiles.div_ceil(2)
}

fn sd1_range(tiles: usize) -> std::ops::Range<usize> {
    tiles.div_ceil(2)..tiles
}

/// One record to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRecord {
    pub index: usize,
    pub operation: String,
    pub edit: EditDescriptor,
    pub mode: SpliceMode,
    pub donor: TileRef,
    pub target: TileRef,
    pub max_side: usize,
    pub seed: u64,
}

/// Pristine tiles and records a blueprint expands to.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub pristine: Vec<TileRef>,
    pub records: Vec<PlannedRecord>,
}

fn set_tiles(kind: DatasetKind, pool: &[PoolProduct], fed: &[usize], sd2: &[usize]) -> Vec<TileRef> {
    let mut out = Vec::new();
    let products = if kind == DatasetKind::Sd2 { sd2 } else { fed };
    for &p in products {
        let range = match kind {
            DatasetKind::Fed => fed_range(pool[p].tiles),
            DatasetKind::Sd1 => sd1_range(pool[p].tiles),
            DatasetKind::Sd2 => 0..pool[p].tiles,
        };
        out.extend(range.map(|index| TileRef { product: p, index }));
    }
    out
}

/// Expand a blueprint into concrete records without touching pixels.
pub fn plan_dataset(bp: &Blueprint, pool: &[PoolProduct]) -> Result<Plan> {
    let (fed, sd2) = group_split(pool.len(), bp.fed_products);
    let tiles = set_tiles(bp.kind, pool, &fed, &sd2);
    if tiles.is_empty() {
        return Err(Error::Capacity(format!("{} has no pristine tiles in the pool", bp.kind)));
    }
    if bp.kind == DatasetKind::Fed {
        return Ok(Plan {
            pristine: tiles,
            records: Vec::new(),
        });
    }

    let total = bp.expected_records();
    let capacity = tiles.len() * bp.max_target_uses;
    if total > capacity {
        return Err(Error::Capacity(format!(
            "{} needs {total} target slots but {} tiles x {} uses give {capacity} (short by {})",
            bp.kind,
            tiles.len(),
            bp.max_target_uses,
            total - capacity
        )));
    }
    let products: BTreeSet<usize> = tiles.iter().map(|t| t.product).collect();
    if products.len() < 2 && bp.kind.modes().contains(&SpliceMode::Inter) && total > 0 {
        return Err(Error::Capacity(format!(
            "{} inter-splicing needs tiles from at least 2 products, pool has {}",
            bp.kind,
            products.len()
        )));
    }

    // Targets: repeated shuffled passes over the set's tiles.
    let mut rng = seeds::rng(bp.seed, 10, 0);
    let mut targets = Vec::with_capacity(capacity);
    for _ in 0..bp.max_target_uses {
        let mut pass = tiles.clone();
        pass.shuffle(&mut rng);
        targets.extend(pass);
    }

    let sides = bp.kind.sides();
    let modes = bp.kind.modes();
    let mut records = Vec::with_capacity(total);
    for op in bp.kind.ops() {
        for i in 0..bp.per_op {
            let index = records.len();
            // Modes split the per-op count in contiguous halves; sides cycle within a mode.
            let per_mode = bp.per_op.div_ceil(modes.len());
            let mode = modes[(i / per_mode).min(modes.len() - 1)];
            let max_side = sides[(i % per_mode) % sides.len()];
            let mut rrng = seeds::rng(bp.seed, 11, index as u64);
            let target = targets[index];
            let donor_pool: Vec<&TileRef> = tiles
                .iter()
                .filter(|t| match mode {
                    SpliceMode::Inter => t.product != target.product,
                    SpliceMode::Intra => t.product == target.product && t.index != target.index,
                })
                .collect();
            let donor = match donor_pool.len() {
                0 if mode == SpliceMode::Intra => target,
                0 => {
                    return Err(Error::Capacity(format!(
                        "no donor from another product for target {}",
                        target.id(pool)
                    )))
                }
                n => *donor_pool[rrng.random_range(0..n)],
            };
            records.push(PlannedRecord {
                index,
                operation: op.name.to_string(),
                edit: (op.sample)(&mut rrng),
                mode,
                donor,
                target,
                max_side,
                seed: rrng.random(),
            });
        }
    }
    Ok(Plan {
        pristine: tiles,
        records,
    })
}

fn tile_file(id: &str) -> PathBuf {
    PathBuf::from("tiles").join(format!("{}.f32", id.replace('#', "_")))
}

/// Plan, cut, splice and write a dataset under `out`, returning its manifest
/// (also written to `out/manifest.jsonl`).
pub fn build_dataset(bp: &Blueprint, registry: &ProductRegistry, registry_dir: &Path, out: &Path) -> Result<DatasetManifest> {
    let pool: Vec<PoolProduct> = registry
        .products
        .iter()
        .map(|p| PoolProduct {
            product_id: p.product_id.clone(),
            tiles: tile_count(p.height, p.width, bp.tile_side),
        })
        .collect();
    let plan = plan_dataset(bp, &pool)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let needed: BTreeSet<usize> = plan.pristine.iter().map(|t| t.product).collect();
    let cut: Vec<(usize, Vec<Tile>)> = needed
        .into_par_iter()
        .map(|p| {
            let raster = registry.load_raster(registry_dir, p)?;
            let tiles = partition_product(raster.pixels(), bp.tile_side, raster.product_id(), raster.provenance())?;
            Ok((p, tiles))
        })
        .collect::<Result<_>>()?;
    let tile = |t: &TileRef| -> &Tile {
        let (_, tiles) = cut.iter().find(|(p, _)| *p == t.product).expect("product was cut");
        &tiles[t.index]
    };

    let pristine: Vec<PristineEntry> = plan
        .pristine
        .par_iter()
        .map(|t| {
            let id = t.id(&pool);
            let path = tile_file(&id);
            save_tile(tile(t), &out.join(&path))?;
            Ok(PristineEntry {
                product_id: pool[t.product].product_id.clone(),
                tile_id: id,
                path,
            })
        })
        .collect::<Result<_>>()?;

    let records: Vec<SpliceRecord> = plan
        .records
        .par_iter()
        .map(|r| {
            let (donor, target) = (tile(&r.donor), tile(&r.target));
            let s = make_splice(donor, target, &r.edit, r.max_side, r.seed)?;
            let id = format!("{}-{:05}", bp.kind, r.index);
            let spliced_path = PathBuf::from("spliced").join(format!("{id}.f32"));
            let mask_path = PathBuf::from("masks").join(format!("{id}.pgm"));
            save_tile(&s.tile, &out.join(&spliced_path))?;
            save_mask(&s.mask, &out.join(&mask_path))?;
            Ok(SpliceRecord {
                id,
                operation: r.operation.clone(),
                spliced_path,
                mask_path,
                target_path: tile_file(&r.target.id(&pool)),
                donor_tile: r.donor.id(&pool),
                target_tile: r.target.id(&pool),
                donor_product: donor.product_id().to_string(),
                target_product: target.product_id().to_string(),
                edit: r.edit.clone(),
                region: s.region,
                donor_origin: s.donor_origin,
                max_side: r.max_side,
                mode: s.mode,
            })
        })
        .collect::<Result<_>>()?;

    let manifest = DatasetManifest {
        name: bp.kind.as_str().to_string(),
        split: bp.kind.split().to_string(),
        seed: bp.seed,
        tile_side: bp.tile_side,
        pristine,
        records,
        base: out.to_path_buf(),
    };
    manifest.save(&out.join("manifest.jsonl"))?;
    Ok(manifest)
}
