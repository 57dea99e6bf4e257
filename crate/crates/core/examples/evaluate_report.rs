//! End-to-end run: synthesize products, build FED and SD2, train a desk
//! extractor briefly, then score K-means and GMM masks per operation.

use sarsplice::fingerprint::{train_extractor, training_pools, ExtractorConfig, LabelMode, SplitPolicy};
use sarsplice::harness::{evaluate_manifest, load_pristine, EvalConfig, MaskMethod};
use sarsplice::splicer::{build_dataset, Blueprint, DatasetKind};
use sarsplice::synthgrd::{default_plans, synthesize};

fn main() -> sarsplice::Result<()> {
    let root = std::env::temp_dir().join("sarsplice-eval");
    let pool = root.join("pool");
    let registry = synthesize(&default_plans(4, 1024, 21), &pool)?;
    let dataset = |kind, per_op| {
        let bp = Blueprint {
            tile_side: 256,
            ..Blueprint::new(kind, per_op, 4)
        };
        build_dataset(&bp, &registry, &pool, &root.join(kind.as_str()))
    };
    let fed = dataset(DatasetKind::Fed, 0)?;
    let sd2 = dataset(DatasetKind::Sd2, 4)?;

    let cfg = ExtractorConfig {
        max_epochs: 3,
        iters_per_epoch: 8,
        split: SplitPolicy::ByTile,
        ..ExtractorConfig::desk(LabelMode::Sae)
    };
    let (train, val) = training_pools(&load_pristine(&fed)?, &cfg)?;
    let (ext, _) = train_extractor("sae-demo", &train, &val, &cfg)?;

    let ecfg = EvalConfig {
        methods: vec![MaskMethod::Kmeans, MaskMethod::Gmm],
        ..EvalConfig::default()
    };
    let report = evaluate_manifest(&sd2, &ext, None, &ecfg)?;
    print!("{}", report.to_csv());
    Ok(())
}
