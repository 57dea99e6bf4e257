//! Synthetic amplitude products with controllable processing signatures.
//!
//! A product is `reflectivity -> speckle -> resample -> [low-pass] -> [quantize]`.
//! Different signatures leave different high-frequency traces, which is what
//! the fingerprint extractor learns to tell apart.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::interp::{box_blur, gaussian_blur, resize, Interpolator};
use crate::raster::{load_tile, save_tile, Grid, Tile};
use crate::{Error, Result};

/// Per-product processing chain parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductSignature {
    pub resample_factor: f64,
    pub resample_kernel: Interpolator,
    /// Gaussian sigma in output pixels; 0 disables the step.
    pub lowpass_sigma: f64,
    /// Quantization step in amplitude units; 0 disables the step.
    pub quantization_step: f64,
    pub looks: u32,
}

impl ProductSignature {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=3.0).contains(&self.resample_factor) {
            return Err(Error::Validation(format!(
                "resample factor {} outside [0.5, 3]",
                self.resample_factor
            )));
        }
        if !(1..=16).contains(&self.looks) {
            return Err(Error::Validation(format!("looks {} outside [1, 16]", self.looks)));
        }
        if !(self.lowpass_sigma >= 0.0) || !(self.quantization_step >= 0.0) {
            return Err(Error::Validation("negative low-pass sigma or quantization step".into()));
        }
        Ok(())
    }

    /// A fixed palette of mutually distinct signatures; `i` wraps around.
    pub fn palette(i: usize) -> Self {
        use Interpolator::*;
        const P: [(f64, Interpolator, f64, f64, u32); 8] = [
            (2.0, Nearest, 0.0, 0.05, 1),
            (1.5, Bicubic, 0.0, 0.0, 4),
            (1.25, Bilinear, 0.0, 0.0, 2),
            (2.5, Bicubic, 0.6, 0.0, 1),
            (1.0, Nearest, 0.0, 0.1, 3),
            (1.75, Bilinear, 0.8, 0.02, 1),
            (3.0, Nearest, 0.0, 0.0, 8),
            (1.0, Bilinear, 1.0, 0.0, 2),
        ];
        let (resample_factor, resample_kernel, lowpass_sigma, quantization_step, looks) = P[i % P.len()];
        Self {
            resample_factor,
            resample_kernel,
            lowpass_sigma,
            quantization_step,
            looks,
        }
    }
}

/// Scene generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Weights over (smooth field, bright blobs, linear features).
    pub texture_mix: [f64; 3],
    pub seed: u64,
}

impl SceneConfig {
    pub fn new(height: usize, width: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            texture_mix: [0.6, 0.25, 0.15],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Sizing(format!(
                "scene of {}x{} pixels",
                self.height, self.width
            )));
        }
        let sum: f64 = self.texture_mix.iter().sum();
        if self.texture_mix.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "texture weights {:?} must be non-negative and sum to 1",
                self.texture_mix
            )));
        }
        Ok(())
    }
}

fn gaussian_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Grid {
    Grid::from_fn(h, w, |_, _| StandardNormal.sample(rng))
}

/// Rescale to zero mean, unit variance.
fn standardize(g: &mut Grid) {
    let mean = g.mean();
    let var = g.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / g.len() as f64;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    for v in g.data_mut() {
        *v = ((*v as f64 - mean) * inv) as f32;
    }
}

/// Log-normal texture: `exp(0.3 g)` with `g` a standardized multi-scale
/// correlated field, so values stay within a few times the mean.
fn smooth_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Grid {
    let mut acc = Grid::zeros(h, w);
    for (scale, weight) in [(4usize, 0.5f32), (16, 0.3), (48, 0.2)] {
        let k = scale.min(h.max(w)).max(1);
        let mut layer = box_blur(&gaussian_field(h, w, rng), k);
        standardize(&mut layer);
        for (a, b) in acc.data_mut().iter_mut().zip(layer.data()) {
            *a += weight * b;
        }
    }
    standardize(&mut acc);
    acc.map(|g| (0.3 * g).exp())
}

/// Sparse bright Gaussian blobs on a dim background, mean near 1.
fn blob_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Grid {
    let mut g = Grid::filled(h, w, 0.3);
    let count = ((h * w) as f64 / 4096.0).ceil() as usize;
    for _ in 0..count {
        let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let radius: f64 = rng.random_range(1.5..8.0);
        let peak: f64 = rng.random_range(4.0..20.0);
        let reach = (3.0 * radius).ceil() as isize;
        for r in (cy as isize - reach).max(0)..(cy as isize + reach + 1).min(h as isize) {
            for c in (cx as isize - reach).max(0)..(cx as isize + reach + 1).min(w as isize) {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                let v = g.get(r as usize, c as usize) as f64 + peak * (-d2 / (2.0 * radius * radius)).exp();
                g.set(r as usize, c as usize, v as f32);
            }
        }
    }
    g
}

/// Straight bright lines (roads, field edges) on a dim background.
fn line_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Grid {
    let mut g = Grid::filled(h, w, 0.4);
    let count = ((h + w) as f64 / 128.0).ceil() as usize;
    for _ in 0..count {
        let (y0, x0) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let half_width: f64 = rng.random_range(0.5..2.0);
        let gain: f64 = rng.random_range(2.0..6.0);
        let (s, c) = theta.sin_cos();
        for r in 0..h {
            for col in 0..w {
                let d = ((r as f64 - y0) * c - (col as f64 - x0) * s).abs();
                if d <= half_width {
                    let v = g.get(r, col) as f64 + gain;
                    g.set(r, col, v as f32);
                }
            }
        }
    }
    g
}

/// Noise-free reflectivity (intensity-like, non-negative) for a scene.
pub fn gen_reflectivity(cfg: &SceneConfig) -> Result<Grid> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Draw every component so the random stream does not depend on the mix.
    let parts = [smooth_field(h, w, &mut rng), blob_field(h, w, &mut rng), line_field(h, w, &mut rng)];
    let mut out = Grid::zeros(h, w);
    for (part, &weight) in parts.iter().zip(&cfg.texture_mix) {
        if weight == 0.0 {
            continue;
        }
        for (o, p) in out.data_mut().iter_mut().zip(part.data()) {
            *o += weight as f32 * p;
        }
    }
    Ok(out)
}

/// Multilook speckle: intensity `= reflectivity * G`, `G ~ Gamma(L, 1/L)`;
/// returns amplitude `sqrt(intensity)`.
pub fn apply_speckle(reflectivity: &Grid, looks: u32, seed: u64) -> Result<Grid> {
    if looks == 0 {
        return Err(Error::Validation("looks must be positive".into()));
    }
    let gamma = Gamma::new(looks as f64, 1.0 / looks as f64).map_err(|e| Error::Validation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(reflectivity.map(|r| {
        let g: f64 = gamma.sample(&mut rng);
        ((r.max(0.0) as f64) * g).sqrt() as f32
    }))
}

/// Round every value to the nearest multiple of `q`.
pub fn quantize(grid: &Grid, q: f64) -> Grid {
    grid.map(|v| ((v as f64 / q).round() * q) as f32)
}

/// A generated product raster and its processing history.
#[derive(Debug, Clone)]
pub struct Product {
    pub raster: Grid,
    pub provenance: Vec<String>,
}

/// Run the full chain. The scene is drawn at `ceil(H / f) x ceil(W / f)` and
/// resampled to exactly the configured `H x W`.
pub fn gen_product(cfg: &SceneConfig, sig: &ProductSignature, seed: u64) -> Result<Product> {
    cfg.validate()?;
    sig.validate()?;
    let f = sig.resample_factor;
    let scene = SceneConfig {
        height: ((cfg.height as f64 / f).ceil() as usize).max(1),
        width: ((cfg.width as f64 / f).ceil() as usize).max(1),
        ..*cfg
    };
    let mut provenance = Vec::new();
    let refl = gen_reflectivity(&scene)?;
    provenance.push(format!("reflectivity:{}x{}:{}", scene.height, scene.width, cfg.seed));
    let speckled = apply_speckle(&refl, sig.looks, seed)?;
    provenance.push(format!("speckle:{}:{seed}", sig.looks));
    let mut raster = resize(&speckled, cfg.height, cfg.width, sig.resample_kernel)?;
    provenance.push(format!("resize:{f}:{}", sig.resample_kernel.name()));
    if sig.lowpass_sigma > 0.0 {
        raster = gaussian_blur(&raster, sig.lowpass_sigma);
        provenance.push(format!("lowpass:{}", sig.lowpass_sigma));
    }
    if sig.quantization_step > 0.0 {
        raster = quantize(&raster, sig.quantization_step);
        provenance.push(format!("quantize:{}", sig.quantization_step));
    }
    // Bicubic overshoot can dip below zero next to bright targets.
    for v in raster.data_mut() {
        *v = v.max(0.0);
    }
    Ok(Product { raster, provenance })
}

/// One product in a `products.json` registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductEntry {
    pub product_id: String,
    /// Raster payload, relative to the registry file.
    pub path: PathBuf,
    pub height: usize,
    pub width: usize,
    pub signature: ProductSignature,
    pub scene: SceneConfig,
    pub speckle_seed: u64,
}

/// Ordered list of generated products.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProductRegistry {
    pub products: Vec<ProductEntry>,
}

impl ProductRegistry {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Load one product raster as a single tile-like record.
    pub fn load_raster(&self, base: &Path, index: usize) -> Result<Tile> {
        let entry = self
            .products
            .get(index)
            .ok_or_else(|| Error::Config(format!("no product #{index}")))?;
        load_tile(&base.join(&entry.path))
    }
}

/// Description of one product to synthesize.
#[derive(Debug, Clone)]
pub struct ProductPlan {
    pub product_id: String,
    pub scene: SceneConfig,
    pub signature: ProductSignature,
    pub speckle_seed: u64,
}

/// Standard plan: `count` products of `side x side`, palette signatures,
/// seeds derived from `seed`.
pub fn default_plans(count: usize, side: usize, seed: u64) -> Vec<ProductPlan> {
    (0..count)
        .map(|i| ProductPlan {
            product_id: format!("P{i:03}"),
            scene: SceneConfig::new(side, side, crate::seeds::derive(seed, 1, i as u64)),
            signature: ProductSignature::palette(i),
            speckle_seed: crate::seeds::derive(seed, 2, i as u64),
        })
        .collect()
}

/// Generate products in parallel, write each raster under `out/products/`
/// and the registry to `out/products.json`.
pub fn synthesize(plans: &[ProductPlan], out: &Path) -> Result<ProductRegistry> {
    let products: Vec<ProductEntry> = plans
        .par_iter()
        .map(|p| {
            let prod = gen_product(&p.scene, &p.signature, p.speckle_seed)?;
            let rel = PathBuf::from("products").join(format!("{}.f32", p.product_id));
            let tile = Tile::new(prod.raster, p.product_id.clone(), prod.provenance)?;
            save_tile(&tile, &out.join(&rel))?;
            Ok(ProductEntry {
                product_id: p.product_id.clone(),
                path: rel,
                height: p.scene.height,
                width: p.scene.width,
                signature: p.signature,
                scene: p.scene,
                speckle_seed: p.speckle_seed,
            })
        })
        .collect::<Result<_>>()?;
    let registry = ProductRegistry { products };
    registry.save(&out.join("products.json"))?;
    Ok(registry)
}
