use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use sarsplice::editops::EditDescriptor;
use sarsplice::raster::{load_mask, load_tile, Grid, Tile};
use sarsplice::splicer::*;
use sarsplice::synthgrd::{default_plans, synthesize, ProductRegistry};
use sarsplice::Error;
use tempfile::TempDir;

/// Four 1024 px products, shared by the dataset tests.
fn pool() -> &'static (TempDir, ProductRegistry) {
    static POOL: OnceLock<(TempDir, ProductRegistry)> = OnceLock::new();
    POOL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let reg = synthesize(&default_plans(4, 1024, 3), dir.path()).unwrap();
        (dir, reg)
    })
}

fn build(kind: DatasetKind, per_op: usize, uses: usize, out: &Path) -> DatasetManifest {
    let (dir, reg) = pool();
    let bp = Blueprint {
        tile_side: 256,
        max_target_uses: uses,
        ..Blueprint::new(kind, per_op, 5)
    };
    build_dataset(&bp, reg, dir.path(), out).unwrap()
}

fn tile(h: usize, w: usize, id: &str, f: impl FnMut(usize, usize) -> f32) -> Tile {
    Tile::new(Grid::from_fn(h, w, f), id, vec![]).unwrap()
}

#[test]
fn unedited_intra_splice_copies_pixels() {
    let t = tile(300, 300, "A", |r, c| (r * 300 + c) as f32 + 0.25);
    let s = make_splice(&t, &t, &EditDescriptor::none(), 256, 9).unwrap();
    assert_eq!(s.mode, SpliceMode::Intra);
    let Region { row, col, height, width } = s.region;
    let (dr, dc) = s.donor_origin;
    for r in 0..300 {
        for c in 0..300 {
            let expect = if s.region.contains(r, c) {
                t.pixels().get(r - row + dr, c - col + dc)
            } else {
                t.pixels().get(r, c)
            };
            assert_eq!(s.tile.pixels().get(r, c).to_bits(), expect.to_bits());
        }
    }
    assert_eq!(s.mask.count_ones(), height * width);
}

#[test]
fn mask_matches_crop_and_bound() {
    let donor = tile(512, 512, "A", |r, c| (r + c) as f32);
    let target = tile(512, 512, "B", |r, c| (r * c) as f32);
    for seed in 0..20 {
        for max_side in [128, 200, 256] {
            let s = make_splice(&donor, &target, &EditDescriptor::none(), max_side, seed).unwrap();
            assert_eq!(s.mode, SpliceMode::Inter);
            assert_eq!(s.mask.count_ones(), s.region.area());
            assert!(s.region.height <= max_side && s.region.width <= max_side);
            assert!(s.region.height >= 128.min(max_side) && s.region.width >= 128.min(max_side));
            for r in 0..512 {
                for c in 0..512 {
                    assert_eq!(s.mask.get(r, c), s.region.contains(r, c));
                }
            }
        }
    }
}

#[test]
fn resized_donor_matches_bilinear_oracle() {
    // Bilinear resampling reproduces an affine ramp exactly, so every spliced
    // pixel is the ramp evaluated at its source coordinate.
    let n = 256;
    let f = |r: f64, c: f64| 1.0 + r + 2.0 * c;
    let donor = tile(n, n, "A", |r, c| f(r as f64, c as f64) as f32);
    let target = tile(n, n, "B", |_, _| 0.0);
    let src = |d: usize| (((d as f64 + 0.5) / 2.0) - 0.5).clamp(0.0, n as f64 - 1.0);
    for seed in 0..5 {
        let s = make_splice(&donor, &target, &EditDescriptor::resize(2.0), 256, seed).unwrap();
        let (dr, dc) = s.donor_origin;
        for i in 0..s.region.height {
            for j in 0..s.region.width {
                let got = s.tile.pixels().get(s.region.row + i, s.region.col + j) as f64;
                let want = f(src(dr + i), src(dc + j));
                assert!((got - want).abs() < 1e-3 * f(255.0, 255.0), "{got} vs {want}");
            }
        }
    }
}

#[test]
fn oversized_crop_is_a_sizing_error() {
    let t = tile(100, 100, "A", |_, _| 1.0);
    assert!(matches!(make_splice(&t, &t, &EditDescriptor::none(), 128, 0), Err(Error::Sizing(_))));
}

#[test]
fn record_counts() {
    let pool: Vec<PoolProduct> = (0..20)
        .map(|i| PoolProduct {
            product_id: format!("P{i:02}"),
            tiles: 361,
        })
        .collect();
    let sd1 = plan_dataset(&Blueprint::full(DatasetKind::Sd1, 0), &pool).unwrap();
    assert_eq!(sd1.records.len(), 1600);
    let sd2 = plan_dataset(&Blueprint::full(DatasetKind::Sd2, 0), &pool).unwrap();
    assert_eq!(sd2.records.len(), 7000);
    for op in SD2_OPS {
        let of_op: Vec<_> = sd2.records.iter().filter(|r| r.operation == op.name).collect();
        assert_eq!(of_op.len(), 1000);
        assert_eq!(of_op.iter().filter(|r| r.mode == SpliceMode::Intra).count(), 500);
    }
    let fed = plan_dataset(&Blueprint::full(DatasetKind::Fed, 0), &pool).unwrap();
    assert!(fed.records.is_empty());
    assert_eq!(fed.pristine.len(), 10 * 181);
}

#[test]
fn capacity_shortfall_is_reported() {
    let pool = vec![
        PoolProduct { product_id: "A".into(), tiles: 4 },
        PoolProduct { product_id: "B".into(), tiles: 4 },
    ];
    let err = plan_dataset(&Blueprint::new(DatasetKind::Sd1, 10, 0), &pool).unwrap_err();
    assert!(matches!(err, Error::Capacity(ref m) if m.contains("short by")), "{err}");
}

#[test]
fn desk_sd1_has_eighty_records() {
    let out = tempfile::tempdir().unwrap();
    let m = build(DatasetKind::Sd1, 10, 5, out.path());
    assert_eq!(m.records.len(), 80);
    assert!(m.records.iter().all(|r| r.mode == SpliceMode::Inter && r.donor_product != r.target_product));
    let back = DatasetManifest::load(&out.path().join("manifest.jsonl")).unwrap();
    assert_eq!(back.records, m.records);
    assert_eq!(back.pristine, m.pristine);
}

#[test]
fn sets_are_disjoint() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fed = build(DatasetKind::Fed, 0, 2, a.path());
    let sd1 = build(DatasetKind::Sd1, 2, 2, b.path());
    let sd2 = build(DatasetKind::Sd2, 2, 2, c.path());
    assert!(fed.records.is_empty());

    let ids = |m: &DatasetManifest| -> BTreeSet<String> { m.pristine.iter().map(|p| p.tile_id.clone()).collect() };
    let products = |m: &DatasetManifest| -> BTreeSet<String> { m.pristine.iter().map(|p| p.product_id.clone()).collect() };
    assert!(ids(&fed).is_disjoint(&ids(&sd1)));
    assert!(products(&sd2).is_disjoint(&products(&fed)));
    assert!(products(&sd2).is_disjoint(&products(&sd1)));
    for r in &sd2.records {
        assert!(products(&sd2).contains(&r.donor_product) && products(&sd2).contains(&r.target_product));
        match r.mode {
            SpliceMode::Inter => assert_ne!(r.donor_product, r.target_product),
            SpliceMode::Intra => assert_eq!(r.donor_product, r.target_product),
        }
    }
}

#[test]
fn builds_are_reproducible_and_exact_outside_the_mask() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = build(DatasetKind::Sd2, 2, 2, a.path());
    build(DatasetKind::Sd2, 2, 2, b.path());
    let bytes = |d: &Path, rel: &Path| fs::read(d.join(rel)).unwrap();
    let ref_manifest = Path::new("manifest.jsonl");
    assert_eq!(bytes(a.path(), ref_manifest), bytes(b.path(), ref_manifest));
    for r in &ma.records {
        assert_eq!(bytes(a.path(), &r.spliced_path), bytes(b.path(), &r.spliced_path));
        assert_eq!(bytes(a.path(), &r.mask_path), bytes(b.path(), &r.mask_path));

        let spliced = load_tile(&ma.resolve(&r.spliced_path)).unwrap();
        let target = load_tile(&ma.resolve(&r.target_path)).unwrap();
        let mask = load_mask(&ma.resolve(&r.mask_path)).unwrap();
        assert_eq!(mask.count_ones(), r.region.area());
        let (h, w) = spliced.pixels().dims();
        for y in 0..h {
            for x in 0..w {
                if !mask.get(y, x) {
                    assert_eq!(spliced.pixels().get(y, x).to_bits(), target.pixels().get(y, x).to_bits());
                }
            }
        }
    }
}
