//! Train a small noise-fingerprint extractor on two products with distinct
//! processing chains and show its loss curve.
//!
//! `cargo run --release --example train_extractor -- [sae|be|asae] [epochs]`

use sarsplice::fingerprint::{group_by_product, split_pool, train_extractor, ExtractorConfig, LabelMode, SplitPolicy};
use sarsplice::raster::partition_product;
use sarsplice::synthgrd::{gen_product, ProductSignature, SceneConfig};

fn main() -> sarsplice::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode: LabelMode = args.next().as_deref().unwrap_or("sae").parse()?;
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let mut tiles = Vec::new();
    for (palette, seed) in [(0, 1), (1, 2)] {
        let p = gen_product(&SceneConfig::new(1024, 1024, seed), &ProductSignature::palette(palette), seed + 100)?;
        tiles.extend(partition_product(&p.raster, 256, &format!("P{palette}"), &p.provenance)?);
    }
    let cfg = ExtractorConfig {
        max_epochs: epochs,
        iters_per_epoch: 8,
        split: SplitPolicy::ByTile,
        ..ExtractorConfig::desk(mode)
    };
    let (train, val) = split_pool(&group_by_product(&tiles), cfg.split);
    let (ext, log) = train_extractor(format!("{mode}-demo"), &train, &val, &cfg)?;
    for e in &log.epochs {
        println!("epoch {:>3}  train {:>9.4}  val {:>9.4}", e.epoch, e.train_loss, e.val_loss);
    }
    println!("{}: best epoch {} (val {:.4}), receptive field {} px", ext.id, log.best_epoch, log.best_val_loss, ext.receptive_field());
    Ok(())
}
