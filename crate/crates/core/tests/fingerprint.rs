use std::collections::BTreeSet;
use std::fs;

use proptest::prelude::*;
use sarsplice::fingerprint::*;
use sarsplice::model_io::ModelParams;
use sarsplice::raster::{partition_product, Grid, Tile};
use sarsplice::seeds;
use sarsplice::synthgrd::{gen_product, ProductSignature, SceneConfig};
use sarsplice::Error;
use tensornet::{AdamConfig, AdamState};

fn tiny(mode: LabelMode) -> ExtractorConfig {
    ExtractorConfig {
        depth: 3,
        width: 4,
        patch: 16,
        batch_products: 2,
        tiles_per_product: 2,
        patches_per_tile: 2,
        position_grid: 2,
        val_batches: 1,
        iters_per_epoch: 2,
        max_epochs: 3,
        early_stop_patience: 3,
        split: SplitPolicy::ByTile,
        ..ExtractorConfig::desk(mode)
    }
}

fn product_tiles(palette: usize, side: usize, tile: usize, seed: u64) -> Vec<Tile> {
    let p = gen_product(&SceneConfig::new(side, side, seed), &ProductSignature::palette(palette), seed).unwrap();
    partition_product(&p.raster, tile, &format!("P{palette}"), &p.provenance).unwrap()
}

fn sample(product: usize, grid_cell: usize) -> PatchSample {
    PatchSample {
        product,
        tile: 0,
        row: 0,
        col: 0,
        grid_cell,
    }
}

#[test]
fn label_examples() {
    let s = [sample(0, 0), sample(0, 1), sample(1, 0), sample(0, 0)];
    let sae = pair_labels(&s, LabelMode::Sae);
    let be = pair_labels(&s, LabelMode::Be);
    let on = |l: &tensornet::loss::PairLabels| -> BTreeSet<(usize, usize)> {
        (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|&(i, j)| l.get(i, j)).collect()
    };
    let expect_sae: BTreeSet<_> = [(0, 1), (1, 0), (0, 3), (3, 0), (1, 3), (3, 1)].into();
    assert_eq!(on(&sae), expect_sae);
    assert_eq!(on(&be), [(0, 3), (3, 0)].into());
    assert_eq!(on(&pair_labels(&s, LabelMode::Asae)), expect_sae);
}

proptest! {
    #[test]
    fn be_labels_refine_sae(cells in prop::collection::vec((0usize..3, 0usize..4), 1..24)) {
        let s: Vec<_> = cells.iter().map(|&(p, c)| sample(p, c)).collect();
        let sae = pair_labels(&s, LabelMode::Sae);
        let be = pair_labels(&s, LabelMode::Be);
        prop_assert!(sae.is_symmetric() && be.is_symmetric());
        for i in 0..s.len() {
            prop_assert!(!sae.get(i, i));
            for j in 0..s.len() {
                prop_assert!(!be.get(i, j) || sae.get(i, j));
            }
        }
    }
}

#[test]
fn extraction_keeps_size_and_is_deterministic() {
    let ext = Extractor::new("x", tiny(LabelMode::Sae)).unwrap();
    assert_eq!(ext.receptive_field(), 7);
    let t = product_tiles(0, 96, 96, 1).remove(0).normalize();
    let a = ext.extract(&t).unwrap();
    assert_eq!(a.values().dims(), (96, 96));
    assert_eq!(a.extractor_id(), "x");
    assert_eq!(a.values(), ext.extract(&t).unwrap().values());
    let odd = ext.extract_grid(&Grid::filled(37, 53, 0.5)).unwrap();
    assert_eq!(odd.values().dims(), (37, 53));
}

#[test]
fn augmentation_doubles_products() {
    let tiles: Vec<Tile> = (0..10)
        .map(|i| Tile::new(Grid::from_fn(40, 56, |r, c| ((r * 7 + c * i) % 13) as f32), format!("S{i}"), vec![]).unwrap())
        .collect();
    let out = augment_products(&tiles, AUGMENT_FACTOR, 4).unwrap();
    assert_eq!(out.len(), 20);
    let ids: BTreeSet<&str> = out.iter().map(|t| t.product_id()).collect();
    assert_eq!(ids.len(), 20);
    assert!(ids.contains("S3+resize1.5"));
    assert!(out.iter().all(|t| t.pixels().dims() == (40, 56)));
    assert_eq!(&out[..10], &tiles[..]);
    assert_eq!(out[10].provenance().len(), 2);
}

#[test]
fn asae_pools_double_each_side() {
    let tiles: Vec<Tile> = (0..10)
        .map(|i| Tile::new(Grid::from_fn(32, 32, |r, c| (r + c + i) as f32), format!("S{i}"), vec![]).unwrap())
        .collect();
    let cfg = ExtractorConfig {
        split: SplitPolicy::ByProduct,
        ..tiny(LabelMode::Asae)
    };
    let (train, val) = training_pools(&tiles, &cfg).unwrap();
    assert_eq!((train.len(), val.len()), (10, 10));
    let (train, val) = training_pools(&tiles, &ExtractorConfig { mode: LabelMode::Sae, ..cfg }).unwrap();
    assert_eq!((train.len(), val.len()), (5, 5));
}

/// Two products whose tiles are exactly one patch, so every batch holds the same patches.
fn single_slot_pool() -> Vec<ProductTiles> {
    let mut tiles = product_tiles(0, 32, 16, 3);
    tiles.truncate(2);
    let mut b = product_tiles(3, 32, 16, 4);
    b.truncate(2);
    tiles.extend(b);
    group_by_product(&tiles)
}

fn frozen(depth: usize) -> ExtractorConfig {
    ExtractorConfig {
        depth,
        lr: 0.0,
        patches_per_tile: 1,
        max_epochs: 20,
        iters_per_epoch: 3,
        ..tiny(LabelMode::Sae)
    }
}

#[test]
fn zero_learning_rate_keeps_train_loss_constant() {
    let pool = single_slot_pool();
    let (_, log) = train_extractor("z", &pool, &pool, &frozen(3)).unwrap();
    let first = log.epochs[0].train_loss;
    for e in &log.epochs {
        assert!((e.train_loss - first).abs() <= 1e-5 * first.abs().max(1.0), "{} vs {first}", e.train_loss);
    }
}

#[test]
fn constant_validation_loss_stops_after_patience() {
    // No batch norm, so nothing moves at lr = 0.
    let pool = single_slot_pool();
    let cfg = frozen(2);
    let (_, log) = train_extractor("z", &pool, &pool, &cfg).unwrap();
    assert!(log.epochs.iter().all(|e| e.val_loss == log.epochs[0].val_loss));
    assert_eq!(log.best_epoch, 0);
    assert!(log.stopped_early);
    assert_eq!(log.epochs.len(), cfg.early_stop_patience + 1);
}

#[test]
fn best_checkpoint_has_minimum_validation_loss() {
    let mut tiles = product_tiles(0, 64, 32, 1);
    tiles.extend(product_tiles(3, 64, 32, 2));
    let (train, val) = split_pool(&group_by_product(&tiles), SplitPolicy::ByTile);
    let cfg = ExtractorConfig {
        max_epochs: 4,
        early_stop_patience: 2,
        lr: 1e-3,
        ..tiny(LabelMode::Sae)
    };
    let (ext, log) = train_extractor("b", &train, &val, &cfg).unwrap();
    let min = log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(log.best_val_loss, min);
    let first_min = log.epochs.iter().position(|e| e.val_loss == min).unwrap();
    assert_eq!(log.best_epoch, first_min);
    if log.stopped_early {
        assert_eq!(log.epochs.len(), log.best_epoch + cfg.early_stop_patience + 1);
    }

    let batch = build_minibatch(&val, &[0, 1], &cfg, &mut seeds::rng(9, 9, 9)).unwrap();
    assert!(eval_loss(ext.network(), &batch).unwrap().is_finite());
}

#[test]
fn adam_descends_on_a_frozen_batch() {
    let mut tiles = product_tiles(0, 64, 32, 5);
    tiles.extend(product_tiles(3, 64, 32, 6));
    let pool = group_by_product(&tiles);
    let cfg = ExtractorConfig {
        tiles_per_product: 4,
        patches_per_tile: 4,
        ..tiny(LabelMode::Sae)
    };
    let batch = build_minibatch(&pool, &[0, 1], &cfg, &mut seeds::rng(1, 2, 3)).unwrap();
    let mut ext = Extractor::new("d", cfg).unwrap();
    let mut adam = AdamState::for_network(
        AdamConfig {
            lr: 1e-4,
            ..AdamConfig::default()
        },
        ext.network(),
    );
    let losses: Vec<f64> = (0..11).map(|_| train_step(ext.network_mut(), &mut adam, &batch).unwrap()).collect();
    assert!(losses[10] < losses[0], "{losses:?}");
}

#[test]
fn minibatch_composition() {
    let mut tiles = product_tiles(0, 64, 32, 5);
    tiles.extend(product_tiles(3, 64, 32, 6));
    let pool = group_by_product(&tiles);
    let cfg = tiny(LabelMode::Be);
    let b = build_minibatch(&pool, &[1, 0], &cfg, &mut seeds::rng(0, 0, 0)).unwrap();
    assert_eq!(b.samples.len(), cfg.batch_size());
    assert_eq!(b.input.data().len(), cfg.batch_size() * 16 * 16);
    for s in &b.samples {
        assert!(s.row + 16 <= 32 && s.col + 16 <= 32);
        assert!(s.grid_cell < 4);
    }
    for (i, s) in b.samples.iter().enumerate() {
        let tile = pool[s.product].tiles[s.tile].pixels();
        assert_eq!(b.input.data()[i * 256], tile.get(s.row, s.col));
    }
}

#[test]
fn training_errors() {
    let mut tiles = product_tiles(0, 64, 32, 5);
    tiles.extend(product_tiles(3, 64, 32, 6));
    let pool = group_by_product(&tiles);
    let cfg = tiny(LabelMode::Sae);
    assert!(matches!(train_extractor("e", &pool, &[], &cfg), Err(Error::Config(_))));
    assert!(matches!(train_extractor("e", &pool[..1], &pool, &cfg), Err(Error::Capacity(_))));
    let big_patch = ExtractorConfig { patch: 48, ..cfg.clone() };
    assert!(matches!(train_extractor("e", &pool, &pool, &big_patch), Err(Error::Sizing(_))));
    let crowded = ExtractorConfig { patches_per_tile: 5, ..cfg };
    assert!(matches!(train_extractor("e", &pool, &pool, &crowded), Err(Error::Capacity(_))));
}

#[test]
fn model_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let ext = Extractor::new("sae-x", tiny(LabelMode::Sae)).unwrap();
    ext.to_params(None).save(dir.path()).unwrap();
    let back = Extractor::from_params(&ModelParams::load(dir.path()).unwrap()).unwrap();
    assert_eq!(back.config, ext.config);
    let g = Grid::from_fn(24, 24, |r, c| ((r * c) % 7) as f32 / 7.0);
    assert_eq!(back.extract_grid(&g).unwrap().values(), ext.extract_grid(&g).unwrap().values());

    let params = dir.path().join("params.f32");
    let mut raw = fs::read(&params).unwrap();
    raw[9] ^= 0x40;
    fs::write(&params, raw).unwrap();
    assert!(matches!(ModelParams::load(dir.path()), Err(Error::Corruption { .. })));
}

#[test]
fn presets_validate() {
    for mode in [LabelMode::Be, LabelMode::Sae, LabelMode::Asae] {
        ExtractorConfig::full(mode).validate().unwrap();
        ExtractorConfig::desk(mode).validate().unwrap();
        assert_eq!(mode.as_str().parse::<LabelMode>().unwrap(), mode);
    }
    let p = ExtractorConfig::full(LabelMode::Sae);
    assert_eq!((p.depth, p.width, p.patch, p.batch_size()), (17, 64, 48, 240));
    assert!(ExtractorConfig { depth: 1, ..p }.validate().is_err());
}

#[test]
fn residual_energy_map() {
    let flat = relative_residual_energy(&Grid::filled(20, 30, 0.4));
    assert_eq!(flat.dims(), (20, 30));
    assert!(flat.data().iter().all(|&v| v.abs() < 1e-10));

    let spike = relative_residual_energy(&Grid::from_fn(9, 9, |r, c| if (r, c) == (4, 4) { 1.0 } else { 0.0 }));
    assert_eq!(spike.get(4, 4), RESIDUAL_ENERGY_CAP);
    assert_eq!(spike.get(0, 0), 0.0);

    // Multiplicative gain leaves the map unchanged.
    let g = Grid::from_fn(16, 16, |r, c| 0.2 + ((r * 5 + c * 3) % 7) as f32 * 0.05);
    let a = relative_residual_energy(&g);
    let b = relative_residual_energy(&g.map(|v| 3.0 * v));
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= 1e-4 * x.abs().max(1e-3), "{x} {y}");
    }
}
