//! Generate a few synthetic amplitude products and print their signatures.
//!
//! `cargo run --release --example synth_products -- [out_dir]`

use std::path::PathBuf;

use sarsplice::synthgrd::{default_plans, synthesize};

fn main() -> sarsplice::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("sarsplice-products"));
    let registry = synthesize(&default_plans(4, 1024, 7), &out)?;
    for (i, p) in registry.products.iter().enumerate() {
        let raster = registry.load_raster(&out, i)?;
        let (lo, hi) = raster.pixels().min_max();
        let s = &p.signature;
        println!(
            "{}  {}x{}  resample {:.2} {:<8} looks {}  q {:.2}  range [{lo:.3}, {hi:.3}]",
            p.product_id,
            p.height,
            p.width,
            s.resample_factor,
            s.resample_kernel.name(),
            s.looks,
            s.quantization_step,
        );
    }
    println!("registry: {}", out.join("products.json").display());
    Ok(())
}
