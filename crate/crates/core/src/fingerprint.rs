//! Fingerprint extractor: a DnCNN-style residual network trained with the
//! distance-based logistic loss under three labeling regimes.
//!
//! * `Sae`: two patches are a positive pair iff they come from the same product.
//! * `Be`: additionally requires the same position cell within the tile.
//! * `Asae`: `Sae` over a pool augmented with 1.5x resized copies that count as
//!   new products.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tensornet::loss::{dbl_loss, PairLabels};
use tensornet::{AdamConfig, AdamState, LayerSpec, Mode, Network, NetworkSpec, Shape, Tensor};

use crate::interp::{box_blur, resize_by, Interpolator};
use crate::model_io::{ModelKind, ModelParams};
use crate::raster::{Fingerprint, Grid, NormalizedTile, Tile};
use crate::seeds;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Be,
    Sae,
    Asae,
}

impl LabelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::Be => "be",
            LabelMode::Sae => "sae",
            LabelMode::Asae => "asae",
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "be" => Ok(LabelMode::Be),
            "sae" => Ok(LabelMode::Sae),
            "asae" => Ok(LabelMode::Asae),
            other => Err(Error::Config(format!("unknown labeling mode `{other}`"))),
        }
    }
}

/// How pristine tiles are divided between training and validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// First half of the products train, the rest validate.
    ByProduct,
    /// Every product contributes half its tiles to each side.
    ByTile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub depth: usize,
    pub width: usize,
    pub patch: usize,
    pub batch_products: usize,
    pub tiles_per_product: usize,
    pub patches_per_tile: usize,
    pub mode: LabelMode,
    pub lr: f64,
    pub max_epochs: usize,
    pub iters_per_epoch: usize,
    pub early_stop_patience: usize,
    /// Cells per side of the position grid used by `Be` labels.
    pub position_grid: usize,
    /// Fixed mini-batches drawn once for the validation loss.
    pub val_batches: usize,
    pub split: SplitPolicy,
    pub seed: u64,
}

impl ExtractorConfig {
    /// Full-size recipe: 17 x 64 DnCNN, 4 products x 10 tiles x 6 patches.
    pub fn full(mode: LabelMode) -> Self {
        Self {
            depth: 17,
            width: 64,
            patch: 48,
            batch_products: 4,
            tiles_per_product: 10,
            patches_per_tile: 6,
            mode,
            lr: 1e-4,
            max_epochs: 500,
            iters_per_epoch: 128,
            early_stop_patience: 30,
            position_grid: 4,
            val_batches: 8,
            split: SplitPolicy::ByProduct,
            seed: 0,
        }
    }

    /// Laptop-scale recipe: 5 x 16 DnCNN, smaller batches, short schedule.
    pub fn desk(mode: LabelMode) -> Self {
        Self {
            depth: 5,
            width: 16,
            batch_products: 2,
            tiles_per_product: 4,
            patches_per_tile: 6,
            max_epochs: 30,
            iters_per_epoch: 32,
            early_stop_patience: 10,
            val_batches: 4,
            ..Self::full(mode)
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_products * self.tiles_per_product * self.patches_per_tile
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 || self.width == 0 || self.patch == 0 {
            return Err(Error::Config(format!(
                "depth {} / width {} / patch {} (need depth >= 2)",
                self.depth, self.width, self.patch
            )));
        }
        if self.batch_products == 0 || self.tiles_per_product == 0 || self.patches_per_tile == 0 {
            return Err(Error::Config("empty mini-batch composition".into()));
        }
        if self.position_grid == 0 || self.val_batches == 0 || self.iters_per_epoch == 0 {
            return Err(Error::Config("position grid, validation batches and iterations must be positive".into()));
        }
        Ok(())
    }
}

/// DnCNN layout: conv+relu, `depth - 2` x (conv, batch norm, relu), conv to one channel.
pub fn dncnn_spec(depth: usize, width: usize, seed: u64) -> NetworkSpec {
    let conv = |out_ch, bias| LayerSpec::Conv2d {
        out_ch,
        k: 3,
        pad: 1,
        bias,
    };
    let mut layers = vec![conv(width, true), LayerSpec::Relu];
    for _ in 0..depth.saturating_sub(2) {
        layers.extend([conv(width, false), LayerSpec::BatchNorm { ch: width }, LayerSpec::Relu]);
    }
    layers.push(conv(1, true));
    NetworkSpec { in_ch: 1, layers, seed }
}

/// Normalized tiles of one product.
#[derive(Debug, Clone)]
pub struct ProductTiles {
    pub product_id: String,
    pub tiles: Vec<NormalizedTile>,
}

/// Group tiles by product id, keeping first-seen order.
pub fn group_by_product(tiles: &[Tile]) -> Vec<ProductTiles> {
    let mut out: Vec<ProductTiles> = Vec::new();
    for t in tiles {
        let norm = t.normalize();
        match out.iter_mut().find(|p| p.product_id == t.product_id()) {
            Some(p) => p.tiles.push(norm),
            None => out.push(ProductTiles {
                product_id: t.product_id().to_string(),
                tiles: vec![norm],
            }),
        }
    }
    out
}

fn split_groups<T: Clone>(groups: &[(String, Vec<T>)], policy: SplitPolicy) -> (Vec<(String, Vec<T>)>, Vec<(String, Vec<T>)>) {
    match policy {
        SplitPolicy::ByProduct => {
            let k = groups.len().div_ceil(2);
            (groups[..k].to_vec(), groups[k..].to_vec())
        }
        SplitPolicy::ByTile => {
            let mut train = Vec::new();
            let mut val = Vec::new();
            for (id, items) in groups {
                let k = items.len().div_ceil(2);
                train.push((id.clone(), items[..k].to_vec()));
                if k < items.len() {
                    val.push((id.clone(), items[k..].to_vec()));
                }
            }
            (train, val)
        }
    }
}

/// Split a product pool into (train, validation).
pub fn split_pool(pool: &[ProductTiles], policy: SplitPolicy) -> (Vec<ProductTiles>, Vec<ProductTiles>) {
    let groups: Vec<_> = pool.iter().map(|p| (p.product_id.clone(), p.tiles.clone())).collect();
    let wrap = |g: Vec<(String, Vec<NormalizedTile>)>| {
        g.into_iter()
            .map(|(product_id, tiles)| ProductTiles { product_id, tiles })
            .collect()
    };
    let (a, b) = split_groups(&groups, policy);
    (wrap(a), wrap(b))
}

/// Resize factor of the augmented products.
pub const AUGMENT_FACTOR: f64 = 1.5;

/// Split pristine tiles per `cfg.split`; for `Asae`, each side is then
/// augmented with resized copies.
pub fn training_pools(tiles: &[Tile], cfg: &ExtractorConfig) -> Result<(Vec<ProductTiles>, Vec<ProductTiles>)> {
    let mut groups: Vec<(String, Vec<Tile>)> = Vec::new();
    for t in tiles {
        match groups.iter_mut().find(|g| g.0 == t.product_id()) {
            Some(g) => g.1.push(t.clone()),
            None => groups.push((t.product_id().to_string(), vec![t.clone()])),
        }
    }
    let (train, val) = split_groups(&groups, cfg.split);
    let finish = |side: Vec<(String, Vec<Tile>)>, stream: u64| -> Result<Vec<ProductTiles>> {
        let mut flat: Vec<Tile> = side.into_iter().flat_map(|g| g.1).collect();
        if cfg.mode == LabelMode::Asae {
            flat = augment_products(&flat, AUGMENT_FACTOR, seeds::derive(cfg.seed, 31, stream))?;
        }
        Ok(group_by_product(&flat))
    };
    Ok((finish(train, 0)?, finish(val, 1)?))
}

/// Resize every tile by `factor` (bilinear), crop back to its original size
/// at a random offset, and register the results as new products.
pub fn augment_products(tiles: &[Tile], factor: f64, seed: u64) -> Result<Vec<Tile>> {
    let resized: Vec<Tile> = tiles
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let big = resize_by(t.pixels(), factor, Interpolator::Bilinear)?;
            let mut rng = seeds::rng(seed, 30, i as u64);
            let (h, w) = (t.height().min(big.height()), t.width().min(big.width()));
            let r = rng.random_range(0..=big.height() - h);
            let c = rng.random_range(0..=big.width() - w);
            let mut prov = t.provenance().to_vec();
            prov.push(format!("resize:{factor}:bilinear"));
            prov.push(format!("crop:{h}x{w}@{r},{c}"));
            Tile::new(
                big.crop(r, c, h, w)?,
                format!("{}+resize{factor}", t.product_id()),
                prov,
            )
        })
        .collect::<Result<_>>()?;
    let mut out = tiles.to_vec();
    out.extend(resized);
    Ok(out)
}

/// Metadata for one patch in a mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSample {
    /// Index into the product pool.
    pub product: usize,
    pub tile: usize,
    pub row: usize,
    pub col: usize,
    /// Position cell within the tile, row-major in a `grid x grid` layout.
    pub grid_cell: usize,
}

/// Patches, their provenance and the pairwise label matrix.
#[derive(Debug, Clone)]
pub struct MiniBatch {
    pub input: Tensor<f32>,
    pub samples: Vec<PatchSample>,
    pub labels: PairLabels,
}

/// Pairwise labels: same product, and for `Be` also the same cell. No self-pairs.
pub fn pair_labels(samples: &[PatchSample], mode: LabelMode) -> PairLabels {
    PairLabels::from_fn(samples.len(), |i, j| {
        let (a, b) = (&samples[i], &samples[j]);
        i != j && a.product == b.product && (mode != LabelMode::Be || a.grid_cell == b.grid_cell)
    })
}

fn cell_of(row: usize, col: usize, patch: usize, h: usize, w: usize, grid: usize) -> usize {
    let cr = ((row + patch / 2) * grid / h).min(grid - 1);
    let cc = ((col + patch / 2) * grid / w).min(grid - 1);
    cr * grid + cc
}

/// Patch origins without replacement on a non-overlapping grid with a random offset.
fn patch_origins(h: usize, w: usize, patch: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    if h < patch || w < patch {
        return Err(Error::Sizing(format!("{h}x{w} tile is smaller than a {patch}x{patch} patch")));
    }
    let or = rng.random_range(0..=(h % patch));
    let oc = rng.random_range(0..=(w % patch));
    let (nr, nc) = ((h - or) / patch, (w - oc) / patch);
    if nr * nc < count {
        return Err(Error::Capacity(format!(
            "{count} patches requested from a {h}x{w} tile holding {}",
            nr * nc
        )));
    }
    let slots: Vec<usize> = rand::seq::index::sample(rng, nr * nc, count).into_vec();
    Ok(slots.into_iter().map(|s| (or + (s / nc) * patch, oc + (s % nc) * patch)).collect())
}

/// Assemble a mini-batch from the given products of `pool`.
pub fn build_minibatch(pool: &[ProductTiles], products: &[usize], cfg: &ExtractorConfig, rng: &mut ChaCha8Rng) -> Result<MiniBatch> {
    let p = cfg.patch;
    let mut samples = Vec::with_capacity(cfg.batch_size());
    let mut pixels = Vec::with_capacity(cfg.batch_size() * p * p);
    for &prod in products {
        let tiles = &pool[prod].tiles;
        if tiles.is_empty() {
            return Err(Error::Capacity(format!("product {} has no tiles", pool[prod].product_id)));
        }
        let picks: Vec<usize> = if tiles.len() >= cfg.tiles_per_product {
            rand::seq::index::sample(rng, tiles.len(), cfg.tiles_per_product).into_vec()
        } else {
            (0..cfg.tiles_per_product).map(|_| rng.random_range(0..tiles.len())).collect()
        };
        for t in picks {
            let g = tiles[t].pixels();
            for (row, col) in patch_origins(g.height(), g.width(), p, cfg.patches_per_tile, rng)? {
                for r in row..row + p {
                    pixels.extend_from_slice(&g.row(r)[col..col + p]);
                }
                samples.push(PatchSample {
                    product: prod,
                    tile: t,
                    row,
                    col,
                    grid_cell: cell_of(row, col, p, g.height(), g.width(), cfg.position_grid),
                });
            }
        }
    }
    let input = Tensor::from_vec(Shape::new(samples.len(), 1, p, p), pixels)?;
    let labels = pair_labels(&samples, cfg.mode);
    Ok(MiniBatch { input, samples, labels })
}

/// Cycles through the pool's products in a fresh random order per epoch.
struct ProductCycler {
    order: Vec<usize>,
    pos: usize,
}

impl ProductCycler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn reshuffle(&mut self, rng: &mut ChaCha8Rng) {
        self.order.shuffle(rng);
        self.pos = 0;
    }

    /// Next `k` distinct products (wrapping reshuffles as needed).
    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos >= self.order.len() {
                self.reshuffle(rng);
            }
            let p = self.order[self.pos];
            self.pos += 1;
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }
}

/// A trained (or freshly initialized) extractor.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub id: String,
    pub config: ExtractorConfig,
    net: Network<f32>,
}

impl Extractor {
    pub fn new(id: impl Into<String>, config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let net = Network::new(dncnn_spec(config.depth, config.width, config.seed))?;
        Ok(Self {
            id: id.into(),
            config,
            net,
        })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<f32> {
        &mut self.net
    }

    /// Receptive field side of the stacked 3x3 convolutions.
    pub fn receptive_field(&self) -> usize {
        2 * self.config.depth + 1
    }

    /// Fully convolutional application; the fingerprint has the tile's size.
    pub fn extract(&self, tile: &NormalizedTile) -> Result<Fingerprint> {
        self.extract_grid(tile.pixels())
    }

    pub fn extract_grid(&self, g: &Grid) -> Result<Fingerprint> {
        let x = Tensor::from_vec(Shape::new(1, 1, g.height(), g.width()), g.data().to_vec())?;
        let y = self.net.infer(&x)?;
        if !y.all_finite() {
            return Err(Error::Model(format!("{} produced non-finite output", self.id)));
        }
        Fingerprint::new(Grid::new(g.height(), g.width(), y.into_vec())?, self.id.clone())
    }

    pub fn to_params(&self, log: Option<&TrainingLog>) -> ModelParams {
        let metadata = serde_json::json!({ "config": self.config, "log": log });
        ModelParams::from_network(ModelKind::Extractor, self.id.clone(), &self.net, metadata)
    }

    pub fn from_params(params: &ModelParams) -> Result<Self> {
        if params.kind != ModelKind::Extractor {
            return Err(Error::Model(format!("{} is not an extractor", params.id)));
        }
        let config: ExtractorConfig = serde_json::from_value(params.metadata["config"].clone())
            .map_err(|e| Error::Model(format!("{}: bad config metadata: {e}", params.id)))?;
        Ok(Self {
            id: params.id.clone(),
            config,
            net: params.to_network()?,
        })
    }
}

/// Flattened per-patch fingerprints: `(values, dim)`.
fn flatten(y: &Tensor<f32>) -> (&[f32], usize) {
    (y.data(), y.shape().sample())
}

/// One Adam step on the DBL loss of `batch`; returns the loss before the step.
pub fn train_step(net: &mut Network<f32>, adam: &mut AdamState, batch: &MiniBatch) -> Result<f64> {
    let pass = net.forward(&batch.input, Mode::Train)?;
    let (values, dim) = flatten(&pass.output);
    let out = dbl_loss(values, dim, &batch.labels)?;
    let upstream = Tensor::from_vec(pass.output.shape(), out.grad)?;
    let grads = net.backward(&pass, &upstream)?;
    adam.step_network(net, &grads.params)?;
    Ok(out.loss)
}

/// DBL loss of a batch in evaluation mode.
pub fn eval_loss(net: &Network<f32>, batch: &MiniBatch) -> Result<f64> {
    let y = net.infer(&batch.input)?;
    let (values, dim) = flatten(&y);
    Ok(dbl_loss(values, dim, &batch.labels)?.loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Draw a batch, retrying when the labels leave no usable anchor.
fn draw_batch(pool: &[ProductTiles], cycler: &mut ProductCycler, cfg: &ExtractorConfig, rng: &mut ChaCha8Rng) -> Result<MiniBatch> {
    const ATTEMPTS: usize = 8;
    for _ in 0..ATTEMPTS {
        let products = cycler.take(cfg.batch_products, rng);
        let batch = build_minibatch(pool, &products, cfg, rng)?;
        if batch.labels.positive_pairs() > 0 {
            return Ok(batch);
        }
    }
    Err(Error::Capacity(format!(
        "no positive pair in {ATTEMPTS} consecutive {} mini-batches",
        cfg.mode
    )))
}

/// Adam on the DBL loss with early stopping on the validation loss; the
/// returned extractor holds the best-validation weights.
pub fn train_extractor(
    id: impl Into<String>,
    train: &[ProductTiles],
    val: &[ProductTiles],
    cfg: &ExtractorConfig,
) -> Result<(Extractor, TrainingLog)> {
    cfg.validate()?;
    if val.is_empty() || val.iter().all(|p| p.tiles.is_empty()) {
        return Err(Error::Config("validation split is empty".into()));
    }
    for (name, pool) in [("training", train), ("validation", val)] {
        if pool.len() < cfg.batch_products {
            return Err(Error::Capacity(format!(
                "{name} split has {} products, a mini-batch needs {}",
                pool.len(),
                cfg.batch_products
            )));
        }
    }

    let mut ext = Extractor::new(id, cfg.clone())?;
    let mut adam = AdamState::for_network(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &ext.net,
    );

    let mut vrng = seeds::rng(cfg.seed, 21, 0);
    let mut vcycler = ProductCycler::new(val.len());
    let val_set: Vec<MiniBatch> = (0..cfg.val_batches)
        .map(|_| draw_batch(val, &mut vcycler, cfg, &mut vrng))
        .collect::<Result<_>>()?;

    let mut rng = seeds::rng(cfg.seed, 20, 0);
    let mut cycler = ProductCycler::new(train.len());
    let mut log = TrainingLog {
        best_val_loss: f64::INFINITY,
        ..TrainingLog::default()
    };
    let mut best_state = ext.net.export_state();

    for epoch in 0..cfg.max_epochs {
        let mut total = 0.0;
        for _ in 0..cfg.iters_per_epoch {
            let batch = draw_batch(train, &mut cycler, cfg, &mut rng)?;
            total += train_step(&mut ext.net, &mut adam, &batch)?;
        }
        let train_loss = total / cfg.iters_per_epoch as f64;
        let val_loss = val_set
            .iter()
            .map(|b| eval_loss(&ext.net, b))
            .sum::<Result<f64>>()?
            / val_set.len() as f64;
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr: adam.lr(),
        });
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best_state = ext.net.export_state();
        } else if epoch - log.best_epoch >= cfg.early_stop_patience {
            log.stopped_early = true;
            break;
        }
    }
    ext.net.import_state(&best_state)?;
    Ok((ext, log))
}

/// Pick a random subset of `k` indices from `0..n` (helper for examples and tools).
pub fn choose_products(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let all: Vec<usize> = (0..n).collect();
    all.choose_multiple(rng, k.min(n)).copied().collect()
}

/// Largest value of [`relative_residual_energy`].
pub const RESIDUAL_ENERGY_CAP: f32 = 9.0;

/// Fixed, untrained fingerprint: squared residual of a 3x3 mean filter
/// divided by the squared local mean, capped at [`RESIDUAL_ENERGY_CAP`].
pub fn relative_residual_energy(g: &Grid) -> Grid {
    let smooth = box_blur(g, 3);
    Grid::from_fn(g.height(), g.width(), |r, c| {
        let m = smooth.get(r, c);
        let d = g.get(r, c) - m;
        (d * d / (m * m).max(1e-8)).min(RESIDUAL_ENERGY_CAP)
    })
}
