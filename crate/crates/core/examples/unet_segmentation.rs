//! Fit the small U-Net mask estimator to synthetic fingerprints where the
//! spliced region has a shifted residual level, then threshold its output.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sarsplice::maskest::{train_unet_split, unet_estimate, SegSample, UnetConfig, DEFAULT_TAU};
use sarsplice::metrics::{confusion, iou};
use sarsplice::raster::{Fingerprint, Grid, TamperMask};
use sarsplice::seeds;

fn sample(i: u64) -> SegSample {
    let mut rng = seeds::rng(5, 0, i);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let (h, w) = (rng.random_range(12..28), rng.random_range(12..28));
    let (r, c) = (rng.random_range(0..64 - h), rng.random_range(0..64 - w));
    let mask = TamperMask::rect(64, 64, r, c, h, w).unwrap();
    let fp = Grid::from_fn(64, 64, |y, x| {
        let v = noise.sample(&mut rng) as f32;
        if mask.get(y, x) { 0.4 * v + 2.0 } else { v }
    });
    SegSample { fp, mask }
}

fn main() -> sarsplice::Result<()> {
    let train: Vec<SegSample> = (0..16).map(sample).collect();
    let val: Vec<SegSample> = (100..104).map(sample).collect();
    let cfg = UnetConfig {
        base_width: 8,
        lr: 3e-3,
        max_epochs: 25,
        crop: None,
        ..UnetConfig::default()
    };
    let (unet, log) = train_unet_split(&train.iter().collect::<Vec<_>>(), &val.iter().collect::<Vec<_>>(), "demo", &cfg)?;
    println!("{} epochs, best val loss {:.4} at epoch {}", log.epochs.len(), log.best_val_loss, log.best_epoch);
    for s in &val {
        let (mask, _) = unet_estimate(&unet, &Fingerprint::new(s.fp.clone(), "demo")?, DEFAULT_TAU)?;
        println!("held-out IoU {:.3}", iou(&confusion(&mask, &s.mask)?)?);
    }
    Ok(())
}
