use std::collections::BTreeMap;
use std::fs;

use proptest::prelude::*;
use sarsplice::fingerprint::{Extractor, ExtractorConfig, LabelMode};
use sarsplice::harness::*;
use sarsplice::metrics::*;
use sarsplice::raster::TamperMask;
use sarsplice::splicer::{build_dataset, Blueprint, DatasetKind, SpliceMode};
use sarsplice::synthgrd::{default_plans, synthesize};
use sarsplice::Error;

fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
    ConfusionCounts { tp, fp, tn, fn_ }
}

#[test]
fn confusion_examples() {
    let truth = TamperMask::rect(10, 10, 2, 2, 4, 5).unwrap();
    let c = confusion(&truth, &truth).unwrap();
    assert_eq!((c.fp, c.fn_, c.tp, c.tn), (0, 0, 20, 80));
    assert_eq!(balanced_accuracy(&c).unwrap(), 1.0);
    assert_eq!(iou(&c).unwrap(), 1.0);

    let c = confusion(&TamperMask::zeros(10, 10), &truth).unwrap();
    assert_eq!((c.tp, c.fn_), (0, 20));
    assert_eq!(balanced_accuracy(&c).unwrap(), 0.5);

    assert!(matches!(confusion(&TamperMask::zeros(3, 4), &TamperMask::zeros(4, 3)), Err(Error::Validation(_))));
}

#[test]
fn analytic_cases() {
    assert_eq!(balanced_accuracy(&counts(50, 0, 900, 50)).unwrap(), 0.75);

    let truth = TamperMask::rect(512, 512, 100, 100, 128, 128).unwrap();
    let shifted = TamperMask::rect(512, 512, 100, 164, 128, 128).unwrap();
    assert_eq!(iou(&confusion(&shifted, &truth).unwrap()).unwrap(), 1.0 / 3.0);

    let other = TamperMask::rect(512, 512, 300, 300, 128, 128).unwrap();
    assert_eq!(iou(&confusion(&other, &truth).unwrap()).unwrap(), 0.0);
}

#[test]
fn undefined_metrics_are_errors() {
    let empty = counts(0, 0, 10, 0);
    assert!(matches!(iou(&empty), Err(Error::UndefinedMetric(_))));
    assert!(matches!(balanced_accuracy(&empty), Err(Error::UndefinedMetric(_))));
    assert!(matches!(balanced_accuracy(&counts(3, 0, 0, 2)), Err(Error::UndefinedMetric(_))));
    assert!(matches!(counts(0, 0, 5, 5).precision(), Err(Error::UndefinedMetric(_))));
}

fn mask_pair() -> impl Strategy<Value = (TamperMask, TamperMask)> {
    (1usize..24, 1usize..24).prop_flat_map(|(h, w)| {
        (prop::collection::vec(0u8..2, h * w), prop::collection::vec(0u8..2, h * w))
            .prop_map(move |(a, b)| (TamperMask::new(h, w, a).unwrap(), TamperMask::new(h, w, b).unwrap()))
    })
}

proptest! {
    #[test]
    fn counts_match_pixel_tally((est, truth) in mask_pair()) {
        let c = confusion(&est, &truth).unwrap();
        let (h, w) = est.dims();
        let mut t = [0u64; 4];
        for r in 0..h {
            for col in 0..w {
                let i = usize::from(est.get(r, col)) * 2 + usize::from(truth.get(r, col));
                t[i] += 1;
            }
        }
        prop_assert_eq!((c.tn, c.fn_, c.fp, c.tp), (t[0], t[1], t[2], t[3]));
        prop_assert_eq!(c.total(), (h * w) as u64);
    }

    #[test]
    fn iou_is_bounded_by_sensitivity_and_precision(tp in 0u64..1000, fp in 0u64..1000, tn in 0u64..1000, fn_ in 0u64..1000) {
        let c = counts(tp, fp, tn, fn_);
        if let (Ok(i), Ok(s), Ok(p)) = (iou(&c), c.sensitivity(), c.precision()) {
            prop_assert!(i <= s.min(p) + 1e-15);
            prop_assert!((0.0..=1.0).contains(&i));
        }
        if let Ok(b) = balanced_accuracy(&c) {
            prop_assert!((0.0..=1.0).contains(&b));
        }
    }

    #[test]
    fn all_pristine_estimate_scores_half(h in 2usize..30, w in 2usize..30, r in 0usize..100, c in 0usize..100) {
        let truth = TamperMask::rect(h, w, r % (h - 1), c % (w - 1), 1, 1).unwrap();
        let ba = balanced_accuracy(&confusion(&TamperMask::zeros(h, w), &truth).unwrap()).unwrap();
        prop_assert_eq!(ba, 0.5);
    }
}

fn result(id: &str, op: &str, scenario: SpliceMode, method: MaskMethod, scores: Option<(f64, f64)>) -> RecordResult {
    RecordResult {
        record_id: id.into(),
        operation: op.into(),
        scenario,
        method,
        extractor: "x".into(),
        counts: None,
        iou: scores.map(|s| s.0),
        ba: scores.map(|s| s.1),
        error: scores.is_none().then(|| "undefined".into()),
    }
}

#[test]
fn report_aggregation() {
    let rs = vec![
        result("a", "blur", SpliceMode::Inter, MaskMethod::Gmm, Some((0.2, 0.6))),
        result("b", "blur", SpliceMode::Inter, MaskMethod::Gmm, Some((0.6, 0.9))),
        result("c", "blur", SpliceMode::Intra, MaskMethod::Gmm, Some((0.1, 0.5))),
        result("d", "blur", SpliceMode::Inter, MaskMethod::Gmm, None),
        result("a", "blur", SpliceMode::Inter, MaskMethod::Kmeans, Some((1.0, 1.0))),
    ];
    let rep = EvalReport::from_records(rs.clone());
    let row = rep.row("blur", SpliceMode::Inter, MaskMethod::Gmm).unwrap();
    assert_eq!(row.n, 2);
    assert!((row.iou - 0.4).abs() < 1e-15 && (row.ba - 0.75).abs() < 1e-15);
    assert_eq!(rep.failures, 1);
    assert_eq!(rep.exit_code(), EXIT_PARTIAL);
    assert_eq!(rep.rows.len(), 3);
    assert!(rep.to_csv().starts_with("operation,scenario,method,extractor,iou,ba,n\n"));

    let mut reversed = rs;
    reversed.reverse();
    assert_eq!(EvalReport::from_records(reversed), rep);

    let empty = EvalReport::from_records(vec![]);
    assert!(empty.rows.is_empty());
    assert_eq!(empty.exit_code(), EXIT_NOTHING_EVALUATED);
}

#[test]
fn method_lists() {
    assert_eq!(parse_methods("gmm, kmeans,gmm").unwrap(), vec![MaskMethod::Gmm, MaskMethod::Kmeans]);
    assert!(matches!(parse_methods("gmm,snake"), Err(Error::Dispatch(_))));
    assert!(matches!(parse_methods(""), Err(Error::Config(_))));
}

#[test]
fn experiment_on_a_small_manifest() {
    let pool = tempfile::tempdir().unwrap();
    let reg = synthesize(&default_plans(4, 512, 8), pool.path()).unwrap();
    let data = tempfile::tempdir().unwrap();
    let bp = Blueprint {
        tile_side: 256,
        ..Blueprint::new(DatasetKind::Sd2, 2, 1)
    };
    let manifest = build_dataset(&bp, &reg, pool.path(), data.path()).unwrap();
    assert_eq!(manifest.records.len(), 14);

    let models = tempfile::tempdir().unwrap();
    let cfg = ExtractorConfig {
        depth: 3,
        width: 4,
        ..ExtractorConfig::desk(LabelMode::Sae)
    };
    Extractor::new("sae-tiny", cfg).unwrap().to_params(None).save(models.path()).unwrap();

    // Break one record so it becomes a per-record failure.
    fs::remove_file(manifest.resolve(&manifest.records[3].spliced_path)).unwrap();

    let out = tempfile::tempdir().unwrap();
    let ecfg = EvalConfig {
        methods: vec![MaskMethod::Kmeans, MaskMethod::Gmm, MaskMethod::Unet],
        workers: 2,
        ..EvalConfig::default()
    };
    let manifest_path = data.path().join("manifest.jsonl");
    let rep = run_experiment(&manifest_path, models.path(), None, &ecfg, out.path()).unwrap();
    assert_eq!(rep.records.len(), 14 * 3);
    // Missing U-Net plus the broken record's two clustering results.
    let failed = rep.records.iter().filter(|r| !r.is_scored()).count();
    assert_eq!(failed, rep.failures);
    assert!(rep.failures >= 14 + 2);
    assert_eq!(rep.exit_code(), EXIT_PARTIAL);
    assert!(rep.rows.iter().all(|r| r.method != MaskMethod::Unet));

    // Means recomputed from the detail file.
    let detail: EvalReport = serde_json::from_slice(&fs::read(out.path().join(DETAIL_JSON)).unwrap()).unwrap();
    assert_eq!(detail, rep);
    let mut sums: BTreeMap<(String, SpliceMode, MaskMethod), (f64, f64, usize)> = BTreeMap::new();
    for r in detail.records.iter().filter(|r| r.is_scored()) {
        let e = sums.entry((r.operation.clone(), r.scenario, r.method)).or_default();
        e.0 += r.iou.unwrap();
        e.1 += r.ba.unwrap();
        e.2 += 1;
    }
    assert_eq!(sums.len(), rep.rows.len());
    for ((op, sc, m), (si, sb, n)) in sums {
        let row = rep.row(&op, sc, m).unwrap();
        assert_eq!(row.n, n);
        assert!((row.iou - si / n as f64).abs() < 1e-12 && (row.ba - sb / n as f64).abs() < 1e-12);
    }
    let csv = fs::read_to_string(out.path().join(REPORT_CSV)).unwrap();
    assert_eq!(csv, rep.to_csv());

    // Same inputs, different worker count: identical report.
    let again = run_experiment(&manifest_path, models.path(), None, &EvalConfig { workers: 1, ..ecfg }, out.path()).unwrap();
    assert_eq!(again, rep);
}
