use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sarsplice::fingerprint::{train_extractor, training_pools, Extractor, ExtractorConfig, LabelMode, SplitPolicy};
use sarsplice::harness::{load_pristine, parse_methods, run_experiment, segmentation_samples, EvalConfig};
use sarsplice::maskest::{cluster_mask, train_unet, unet_estimate, ClusterMethod, Unet, UnetConfig, DEFAULT_CLUSTERS};
use sarsplice::model_io::{ModelKind, ModelParams};
use sarsplice::raster::{load_fingerprint, load_tile, save_fingerprint, save_mask};
use sarsplice::splicer::{build_dataset, Blueprint, DatasetKind, DatasetManifest};
use sarsplice::synthgrd::{default_plans, synthesize, ProductRegistry};
use sarsplice::{Error, Result};

#[derive(Parser)]
#[command(name = "sarsplice", version, about = "SAR splicing datasets, noise fingerprints and tampering masks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    Fed,
    Sd1,
    Sd2,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Be,
    Sae,
    Asae,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    ByProduct,
    ByTile,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Kmeans,
    Gmm,
    Unet,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic products and a products.json registry.
    Synth {
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 2048)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a FED, SD1 or SD2 dataset from a product registry.
    Splice {
        #[arg(long = "set", value_enum)]
        set: SetArg,
        #[arg(long)]
        per_op: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        tile_side: usize,
        /// Leading registry products reserved for FED/SD1.
        #[arg(long)]
        fed_products: Option<usize>,
        #[arg(long, default_value_t = 2)]
        max_target_uses: usize,
    },
    /// Train a fingerprint extractor on a FED manifest.
    TrainFp {
        #[arg(long)]
        fed: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        preset: PresetArg,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Compute the fingerprint of one tile.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a tampering mask from a fingerprint.
    Mask {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        fp: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        tau: f32,
        #[arg(long, default_value_t = DEFAULT_CLUSTERS)]
        clusters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the U-Net mask estimator on SD1 fingerprints of one extractor.
    TrainUnet {
        #[arg(long)]
        sd1: PathBuf,
        #[arg(long)]
        fp_model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score mask estimators on an SD2 manifest.
    Evaluate {
        #[arg(long)]
        sd2: PathBuf,
        #[arg(long)]
        fp_model: PathBuf,
        #[arg(long, default_value = "kmeans,gmm,unet")]
        methods: String,
        /// U-Net model directory, required for the `unet` method.
        #[arg(long)]
        unet: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_extractor(dir: &Path) -> Result<Extractor> {
    Extractor::from_params(&ModelParams::load(dir)?.expect_kind(ModelKind::Extractor)?)
}

fn run(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Synth { count, side, seed, out } => {
            let reg = synthesize(&default_plans(count, side, seed), &out)?;
            println!("{} products written to {}", reg.products.len(), out.display());
        }
        Cmd::Splice {
            set,
            per_op,
            seed,
            pool,
            out,
            tile_side,
            fed_products,
            max_target_uses,
        } => {
            let kind = match set {
                SetArg::Fed => DatasetKind::Fed,
                SetArg::Sd1 => DatasetKind::Sd1,
                SetArg::Sd2 => DatasetKind::Sd2,
            };
            let bp = Blueprint {
                tile_side,
                fed_products,
                max_target_uses,
                ..Blueprint::new(kind, per_op, seed)
            };
            let registry = ProductRegistry::load(&pool)?;
            let base = pool.parent().unwrap_or(Path::new("."));
            let m = build_dataset(&bp, &registry, base, &out)?;
            println!("{}: {} pristine tiles, {} records in {}", m.name, m.pristine.len(), m.records.len(), out.display());
        }
        Cmd::TrainFp {
            fed,
            mode,
            depth,
            width,
            seed,
            out,
            preset,
            epochs,
            iters,
            lr,
            split,
        } => {
            let mode = match mode {
                ModeArg::Be => LabelMode::Be,
                ModeArg::Sae => LabelMode::Sae,
                ModeArg::Asae => LabelMode::Asae,
            };
            let mut cfg = match preset {
                PresetArg::Desk => ExtractorConfig::desk(mode),
                PresetArg::Full => ExtractorConfig::full(mode),
            };
            cfg.seed = seed;
            cfg.depth = depth.unwrap_or(cfg.depth);
            cfg.width = width.unwrap_or(cfg.width);
            cfg.max_epochs = epochs.unwrap_or(cfg.max_epochs);
            cfg.iters_per_epoch = iters.unwrap_or(cfg.iters_per_epoch);
            cfg.lr = lr.unwrap_or(cfg.lr);
            if let Some(s) = split {
                cfg.split = match s {
                    SplitArg::ByProduct => SplitPolicy::ByProduct,
                    SplitArg::ByTile => SplitPolicy::ByTile,
                };
            }
            let manifest = DatasetManifest::load(&fed)?;
            let tiles = load_pristine(&manifest)?;
            let (train, val) = training_pools(&tiles, &cfg)?;
            let id = format!("{}-d{}w{}-s{}", mode, cfg.depth, cfg.width, seed);
            let (ext, log) = train_extractor(id, &train, &val, &cfg)?;
            ext.to_params(Some(&log)).save(&out)?;
            println!(
                "{}: {} epochs, best val loss {:.5} at epoch {}",
                ext.id,
                log.epochs.len(),
                log.best_val_loss,
                log.best_epoch
            );
        }
        Cmd::Extract { model, input, out } => {
            let ext = load_extractor(&model)?;
            let tile = load_tile(&input)?;
            save_fingerprint(&ext.extract(&tile.normalize())?, &out)?;
        }
        Cmd::Mask {
            method,
            fp,
            model,
            tau,
            clusters,
            seed,
            out,
        } => {
            let fp = load_fingerprint(&fp)?.standardized();
            let mask = match method {
                MethodArg::Kmeans => cluster_mask(&fp, ClusterMethod::Kmeans, clusters, seed)?,
                MethodArg::Gmm => cluster_mask(&fp, ClusterMethod::Gmm, clusters, seed)?,
                MethodArg::Unet => {
                    let dir = model.ok_or_else(|| Error::Model("--model is required for the unet method".into()))?;
                    let unet = Unet::from_params(&ModelParams::load(&dir)?.expect_kind(ModelKind::Unet)?)?;
                    unet_estimate(&unet, &fp, tau)?.0
                }
            };
            save_mask(&mask, &out)?;
            println!("{} of {} pixels marked", mask.count_ones(), mask.bits().len());
        }
        Cmd::TrainUnet {
            sd1,
            fp_model,
            out,
            epochs,
            lr,
            seed,
        } => {
            let ext = load_extractor(&fp_model)?;
            let manifest = DatasetManifest::load(&sd1)?;
            let samples = segmentation_samples(&manifest, &ext)?;
            let mut cfg = UnetConfig::desk();
            cfg.seed = seed;
            cfg.max_epochs = epochs.unwrap_or(cfg.max_epochs);
            cfg.lr = lr.unwrap_or(cfg.lr);
            let (unet, log) = train_unet(&samples, &ext.id, &cfg)?;
            unet.to_params(Some(&log)).save(&out)?;
            println!("{}: {} epochs, best val loss {:.5}", unet.id, log.epochs.len(), log.best_val_loss);
        }
        Cmd::Evaluate {
            sd2,
            fp_model,
            methods,
            unet,
            workers,
            seed,
            out,
        } => {
            let cfg = EvalConfig {
                methods: parse_methods(&methods)?,
                workers,
                seed,
                ..EvalConfig::default()
            };
            let report = run_experiment(&sd2, &fp_model, unet.as_deref(), &cfg, &out)?;
            print!("{}", report.to_csv());
            if report.failures > 0 {
                eprintln!("{} results excluded; see {}", report.failures, out.display());
            }
            return Ok(report.exit_code());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().cmd) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
