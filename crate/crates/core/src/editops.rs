//! Editing functions applied to a donor tile before it is spliced.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::interp::{box_blur, median_blur, resize_by, rotate, Interpolator};
use crate::raster::{Grid, NormalizedTile};
use crate::{Error, Result};

pub const AVERAGE_BLUR_SIDE: usize = 10;
pub const MEDIAN_BLUR_SIDE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EditKind {
    None,
    Rotate,
    Resize,
    RotateResize,
    GaussianNoise,
    LaplacianNoise,
    AverageBlur,
    MedianBlur,
    SpeckleNoise,
}

impl EditKind {
    pub const ALL: [EditKind; 9] = [
        EditKind::None,
        EditKind::Rotate,
        EditKind::Resize,
        EditKind::RotateResize,
        EditKind::GaussianNoise,
        EditKind::LaplacianNoise,
        EditKind::AverageBlur,
        EditKind::MedianBlur,
        EditKind::SpeckleNoise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EditKind::None => "none",
            EditKind::Rotate => "rotate",
            EditKind::Resize => "resize",
            EditKind::RotateResize => "rotate_resize",
            EditKind::GaussianNoise => "gaussian_noise",
            EditKind::LaplacianNoise => "laplacian_noise",
            EditKind::AverageBlur => "average_blur",
            EditKind::MedianBlur => "median_blur",
            EditKind::SpeckleNoise => "speckle_noise",
        }
    }

    /// Parameter names the kind requires (`kernel` for blurs is optional).
    fn params(self) -> &'static [&'static str] {
        match self {
            EditKind::None => &[],
            EditKind::Rotate => &["angle"],
            EditKind::Resize => &["factor"],
            EditKind::RotateResize => &["angle", "factor"],
            EditKind::GaussianNoise | EditKind::LaplacianNoise | EditKind::SpeckleNoise => &["variance"],
            EditKind::AverageBlur | EditKind::MedianBlur => &[],
        }
    }
}

impl fmt::Display for EditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EditKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EditKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Dispatch(s.to_string()))
    }
}

/// Serialized as `{"kind": ..., "params": {...}, "seed": ...}`.
///
/// The kind is kept as a string so that manifests with unknown kinds still
/// parse; dispatch reports them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditDescriptor {
    pub kind: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl EditDescriptor {
    pub fn new(kind: EditKind, params: &[(&str, f64)], seed: u64) -> Self {
        Self {
            kind: kind.as_str().to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            seed,
        }
    }

    pub fn none() -> Self {
        Self::new(EditKind::None, &[], 0)
    }

    pub fn rotate(angle: f64) -> Self {
        Self::new(EditKind::Rotate, &[("angle", angle)], 0)
    }

    pub fn resize(factor: f64) -> Self {
        Self::new(EditKind::Resize, &[("factor", factor)], 0)
    }

    pub fn rotate_resize(angle: f64, factor: f64) -> Self {
        Self::new(EditKind::RotateResize, &[("angle", angle), ("factor", factor)], 0)
    }

    pub fn gaussian_noise(variance: f64, seed: u64) -> Self {
        Self::new(EditKind::GaussianNoise, &[("variance", variance)], seed)
    }

    pub fn laplacian_noise(variance: f64, seed: u64) -> Self {
        Self::new(EditKind::LaplacianNoise, &[("variance", variance)], seed)
    }

    pub fn speckle_noise(variance: f64, seed: u64) -> Self {
        Self::new(EditKind::SpeckleNoise, &[("variance", variance)], seed)
    }

    pub fn average_blur() -> Self {
        Self::new(EditKind::AverageBlur, &[("kernel", AVERAGE_BLUR_SIDE as f64)], 0)
    }

    pub fn median_blur() -> Self {
        Self::new(EditKind::MedianBlur, &[("kernel", MEDIAN_BLUR_SIDE as f64)], 0)
    }

    pub fn edit_kind(&self) -> Result<EditKind> {
        self.kind.parse()
    }

    fn param(&self, name: &str) -> Result<f64> {
        self.params
            .get(name)
            .copied()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Validation(format!("{}: missing or non-finite `{name}`", self.kind)))
    }

    fn kernel(&self, default: usize) -> Result<usize> {
        match self.params.get("kernel") {
            None => Ok(default),
            Some(&k) if k >= 1.0 && k.fract() == 0.0 && k <= 255.0 => Ok(k as usize),
            Some(k) => Err(Error::Validation(format!("{}: kernel side {k}", self.kind))),
        }
    }

    /// Check the kind and its parameter ranges.
    pub fn validate(&self) -> Result<EditKind> {
        let kind = self.edit_kind()?;
        let allowed: &[&str] = match kind {
            EditKind::AverageBlur | EditKind::MedianBlur => &["kernel"],
            k => k.params(),
        };
        if let Some(extra) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Validation(format!("{}: unexpected parameter `{extra}`", self.kind)));
        }
        for name in kind.params() {
            let v = self.param(name)?;
            let ok = match *name {
                "angle" => (-45.0..=45.0).contains(&v),
                "factor" => v > 1.0 && v <= 2.5,
                "variance" => v >= 0.0,
                _ => true,
            };
            if !ok {
                return Err(Error::Validation(format!("{}: {name} = {v} out of range", self.kind)));
            }
        }
        match kind {
            EditKind::AverageBlur => {
                self.kernel(AVERAGE_BLUR_SIDE)?;
            }
            EditKind::MedianBlur => {
                if self.kernel(MEDIAN_BLUR_SIDE)? % 2 == 0 {
                    return Err(Error::Validation("median_blur: kernel side must be odd".into()));
                }
            }
            _ => {}
        }
        Ok(kind)
    }
}

fn clip_unit(g: Grid) -> Grid {
    g.map(|v| v.clamp(0.0, 1.0))
}

/// Add independent zero-mean noise drawn by `draw`, then clip to `[0, 1]`.
fn additive(g: &Grid, seed: u64, mut draw: impl FnMut(&mut ChaCha8Rng) -> f64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.map(|v| (v as f64 + draw(&mut rng)).clamp(0.0, 1.0) as f32)
}

/// Apply an edit to a normalized tile. Deterministic given the descriptor.
pub fn apply_edit(tile: &NormalizedTile, e: &EditDescriptor) -> Result<NormalizedTile> {
    let kind = e.validate()?;
    let g = tile.pixels();
    let out = match kind {
        EditKind::None => return Ok(tile.clone()),
        EditKind::Rotate => rotate(g, e.param("angle")?),
        EditKind::Resize => resize_by(g, e.param("factor")?, Interpolator::Bilinear)?,
        EditKind::RotateResize => {
            let rotated = rotate(g, e.param("angle")?);
            resize_by(&rotated, e.param("factor")?, Interpolator::Bilinear)?
        }
        EditKind::GaussianNoise => {
            let normal = Normal::new(0.0, e.param("variance")?.sqrt()).map_err(|x| Error::Validation(x.to_string()))?;
            additive(g, e.seed, |rng| normal.sample(rng))
        }
        EditKind::LaplacianNoise => {
            // variance = 2 b^2; |x| ~ Exp(1/b) with a fair random sign.
            let b = (e.param("variance")? / 2.0).sqrt();
            if b == 0.0 {
                g.clone()
            } else {
                let exp = Exp::new(1.0 / b).map_err(|x| Error::Validation(x.to_string()))?;
                additive(g, e.seed, |rng| {
                    let mag = exp.sample(rng);
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
            }
        }
        EditKind::SpeckleNoise => {
            let normal = Normal::new(0.0, e.param("variance")?.sqrt()).map_err(|x| Error::Validation(x.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(e.seed);
            g.map(|v| (v as f64 * (1.0 + normal.sample(&mut rng))).clamp(0.0, 1.0) as f32)
        }
        EditKind::AverageBlur => box_blur(g, e.kernel(AVERAGE_BLUR_SIDE)?),
        EditKind::MedianBlur => median_blur(g, e.kernel(MEDIAN_BLUR_SIDE)?),
    };
    tile.with_pixels(clip_unit(out))
}
