//! Cut products into tiles and build the FED, SD1 and SD2 sets.
//!
//! `cargo run --release --example build_datasets`

use std::collections::BTreeMap;

use sarsplice::splicer::{build_dataset, Blueprint, DatasetKind};
use sarsplice::synthgrd::{default_plans, synthesize};

fn main() -> sarsplice::Result<()> {
    let root = std::env::temp_dir().join("sarsplice-datasets");
    let registry = synthesize(&default_plans(4, 1024, 1), &root.join("pool"))?;

    for (kind, per_op) in [(DatasetKind::Fed, 0), (DatasetKind::Sd1, 4), (DatasetKind::Sd2, 4)] {
        let bp = Blueprint {
            tile_side: 256,
            ..Blueprint::new(kind, per_op, 11)
        };
        let m = build_dataset(&bp, &registry, &root.join("pool"), &root.join(kind.as_str()))?;
        let mut per: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for r in &m.records {
            *per.entry((r.operation.as_str(), r.mode.as_str())).or_default() += 1;
        }
        println!("{kind}: {} pristine tiles, {} records", m.pristine.len(), m.records.len());
        for ((op, mode), n) in per {
            println!("  {op:<20} {mode:<6} {n}");
        }
    }
    Ok(())
}
