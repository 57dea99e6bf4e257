//! End-to-end evaluation: fingerprint every spliced tile of a manifest,
//! estimate masks with each method, score them and aggregate per operation
//! and splicing scenario.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fingerprint::Extractor;
use crate::maskest::{cluster_mask, unet_estimate, ClusterMethod, SegSample, Unet, DEFAULT_CLUSTERS, DEFAULT_TAU};
use crate::metrics::{balanced_accuracy, confusion, iou, ConfusionCounts};
use crate::model_io::{ModelKind, ModelParams};
use crate::raster::{load_mask, load_tile, Fingerprint, Tile};
use crate::seeds;
use crate::splicer::{DatasetManifest, SpliceMode, SpliceRecord};
use crate::{Error, Result};

pub const REPORT_CSV: &str = "report.csv";
pub const DETAIL_JSON: &str = "detail.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOTHING_EVALUATED: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMethod {
    Kmeans,
    Gmm,
    Unet,
}

impl MaskMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskMethod::Kmeans => "kmeans",
            MaskMethod::Gmm => "gmm",
            MaskMethod::Unet => "unet",
        }
    }
}

impl fmt::Display for MaskMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kmeans" => Ok(MaskMethod::Kmeans),
            "gmm" => Ok(MaskMethod::Gmm),
            "unet" => Ok(MaskMethod::Unet),
            other => Err(Error::Dispatch(format!("unknown mask method `{other}`"))),
        }
    }
}

/// Parse a comma-separated method list such as `kmeans,gmm,unet`.
pub fn parse_methods(list: &str) -> Result<Vec<MaskMethod>> {
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let m: MaskMethod = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no mask method given".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub methods: Vec<MaskMethod>,
    pub clusters: usize,
    pub tau: f32,
    pub workers: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: vec![MaskMethod::Kmeans, MaskMethod::Gmm, MaskMethod::Unet],
            clusters: DEFAULT_CLUSTERS,
            tau: DEFAULT_TAU,
            workers: 8,
            seed: 0,
        }
    }
}

/// Score of one (record, method) pair, or the reason it has none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub record_id: String,
    pub operation: String,
    pub scenario: SpliceMode,
    pub method: MaskMethod,
    pub extractor: String,
    pub counts: Option<ConfusionCounts>,
    pub iou: Option<f64>,
    pub ba: Option<f64>,
    pub error: Option<String>,
}

impl RecordResult {
    pub fn is_scored(&self) -> bool {
        self.iou.is_some() && self.ba.is_some()
    }
}

/// Mean scores of one (operation, scenario, method, extractor) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub operation: String,
    pub scenario: SpliceMode,
    pub method: MaskMethod,
    pub extractor: String,
    pub iou: f64,
    pub ba: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub records: Vec<RecordResult>,
    /// Results excluded from the means.
    pub failures: usize,
}

impl EvalReport {
    /// Group scored results into rows sorted by their key.
    pub fn from_records(mut records: Vec<RecordResult>) -> Self {
        records.sort_by(|a, b| {
            (&a.record_id, a.method, &a.extractor).cmp(&(&b.record_id, b.method, &b.extractor))
        });
        type Key = (String, SpliceMode, MaskMethod, String);
        let mut cells: BTreeMap<Key, (f64, f64, usize)> = BTreeMap::new();
        let mut failures = 0;
        for r in &records {
            match (r.iou, r.ba) {
                (Some(i), Some(b)) => {
                    let cell = cells
                        .entry((r.operation.clone(), r.scenario, r.method, r.extractor.clone()))
                        .or_default();
                    cell.0 += i;
                    cell.1 += b;
                    cell.2 += 1;
                }
                _ => failures += 1,
            }
        }
        let rows = cells
            .into_iter()
            .map(|((operation, scenario, method, extractor), (si, sb, n))| ReportRow {
                operation,
                scenario,
                method,
                extractor,
                iou: si / n as f64,
                ba: sb / n as f64,
                n,
            })
            .collect();
        Self {
            rows,
            records,
            failures,
        }
    }

    pub fn scored(&self) -> usize {
        self.records.iter().filter(|r| r.is_scored()).count()
    }

    pub fn exit_code(&self) -> i32 {
        if self.scored() == 0 {
            EXIT_NOTHING_EVALUATED
        } else if self.failures > 0 {
            EXIT_PARTIAL
        } else {
            EXIT_OK
        }
    }

    pub fn row(&self, operation: &str, scenario: SpliceMode, method: MaskMethod) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.operation == operation && r.scenario == scenario && r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("operation,scenario,method,extractor,iou,ba,n\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{}\n",
                r.operation,
                r.scenario.as_str(),
                r.method,
                r.extractor,
                r.iou,
                r.ba,
                r.n
            ));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(REPORT_CSV);
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let detail = dir.join(DETAIL_JSON);
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::json(&detail, e))?;
        fs::write(&detail, json).map_err(|e| Error::io(&detail, e))
    }
}

/// Normalize, extract and standardize.
pub fn fingerprint_tile(extractor: &Extractor, tile: &Tile) -> Result<Fingerprint> {
    Ok(extractor.extract(&tile.normalize())?.standardized())
}

fn score(est: &crate::raster::TamperMask, truth: &crate::raster::TamperMask) -> Result<(ConfusionCounts, f64, f64)> {
    let c = confusion(est, truth)?;
    Ok((c, iou(&c)?, balanced_accuracy(&c)?))
}

fn evaluate_record(
    manifest: &DatasetManifest,
    index: usize,
    rec: &SpliceRecord,
    extractor: &Extractor,
    unet: Option<&Unet>,
    cfg: &EvalConfig,
) -> Vec<RecordResult> {
    let blank = |method: MaskMethod| RecordResult {
        record_id: rec.id.clone(),
        operation: rec.operation.clone(),
        scenario: rec.mode,
        method,
        extractor: extractor.id.clone(),
        counts: None,
        iou: None,
        ba: None,
        error: None,
    };
    let fail_all = |e: Error| {
        log::warn!("record {}: {e}", rec.id);
        cfg.methods
            .iter()
            .map(|&m| RecordResult {
                error: Some(e.to_string()),
                ..blank(m)
            })
            .collect()
    };
    let prepared = load_tile(&manifest.resolve(&rec.spliced_path))
        .and_then(|t| fingerprint_tile(extractor, &t))
        .and_then(|fp| Ok((fp, load_mask(&manifest.resolve(&rec.mask_path))?)));
    let (fp, truth) = match prepared {
        Ok(v) => v,
        Err(e) => return fail_all(e),
    };
    let seed = seeds::derive(cfg.seed, 41, index as u64);
    cfg.methods
        .iter()
        .map(|&method| {
            let est = match method {
                MaskMethod::Kmeans => cluster_mask(&fp, ClusterMethod::Kmeans, cfg.clusters, seed),
                MaskMethod::Gmm => cluster_mask(&fp, ClusterMethod::Gmm, cfg.clusters, seed),
                MaskMethod::Unet => match unet {
                    Some(u) => unet_estimate(u, &fp, cfg.tau).map(|(m, _)| m),
                    None => Err(Error::Model("no U-Net model supplied".into())),
                },
            };
            match est.and_then(|m| score(&m, &truth)) {
                Ok((c, i, b)) => RecordResult {
                    counts: Some(c),
                    iou: Some(i),
                    ba: Some(b),
                    ..blank(method)
                },
                Err(e) => {
                    log::warn!("record {} / {method}: {e}", rec.id);
                    RecordResult {
                        error: Some(e.to_string()),
                        ..blank(method)
                    }
                }
            }
        })
        .collect()
}

/// Evaluate every record in parallel on a `cfg.workers`-thread pool.
pub fn evaluate_manifest(manifest: &DatasetManifest, extractor: &Extractor, unet: Option<&Unet>, cfg: &EvalConfig) -> Result<EvalReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let records: Vec<RecordResult> = pool.install(|| {
        manifest
            .records
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, rec)| evaluate_record(manifest, i, rec, extractor, unet, cfg))
            .collect()
    });
    Ok(EvalReport::from_records(records))
}

/// Load models, evaluate a manifest and write `report.csv` and `detail.json` to `out`.
pub fn run_experiment(manifest_path: &Path, extractor_dir: &Path, unet_dir: Option<&Path>, cfg: &EvalConfig, out: &Path) -> Result<EvalReport> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let extractor = Extractor::from_params(&ModelParams::load(extractor_dir)?.expect_kind(ModelKind::Extractor)?)?;
    let unet = match unet_dir {
        Some(d) => Some(Unet::from_params(&ModelParams::load(d)?.expect_kind(ModelKind::Unet)?)?),
        None => None,
    };
    let report = evaluate_manifest(&manifest, &extractor, unet.as_ref(), cfg)?;
    report.write(out)?;
    log::info!(
        "evaluated {} results ({} excluded) into {}",
        report.scored(),
        report.failures,
        out.display()
    );
    Ok(report)
}

/// Pristine tiles of a manifest, in listing order.
pub fn load_pristine(manifest: &DatasetManifest) -> Result<Vec<Tile>> {
    manifest
        .pristine
        .par_iter()
        .map(|p| load_tile(&manifest.resolve(&p.path)))
        .collect()
}

/// Standardized fingerprints and truth masks of every spliced record.
pub fn segmentation_samples(manifest: &DatasetManifest, extractor: &Extractor) -> Result<Vec<SegSample>> {
    manifest
        .records
        .par_iter()
        .map(|rec| {
            let tile = load_tile(&manifest.resolve(&rec.spliced_path))?;
            let fp = fingerprint_tile(extractor, &tile)?;
            let mask = load_mask(&manifest.resolve(&rec.mask_path))?;
            Ok(SegSample {
                fp: fp.values().clone(),
                mask,
            })
        })
        .collect()
}
