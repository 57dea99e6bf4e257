//! Fingerprint to tampering mask: patch clustering (K-means or a diagonal
//! Gaussian mixture) with the compactness criterion, or a U-Net segmenter.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};
use tensornet::loss::DiceFocal;
use tensornet::{AdamConfig, AdamState, LayerSpec, Mode, Network, NetworkSpec, Shape, Tensor};

use crate::interp::reflect_index;
use crate::model_io::{ModelKind, ModelParams};
use crate::raster::{Fingerprint, Grid, TamperMask};
use crate::seeds;
use crate::{Error, Result};

pub const PATCH_SIDE: usize = 8;
pub const DEFAULT_CLUSTERS: usize = 7;
pub const DEFAULT_TAU: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchObservation {
    pub vector: Vec<f64>,
    pub patch_row: usize,
    pub patch_col: usize,
}

/// Non-overlapping patches of a center-cropped fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub side: usize,
    /// Fingerprint dimensions before cropping.
    pub dims: (usize, usize),
    /// Top-left corner of the crop.
    pub offset: (usize, usize),
    pub rows: usize,
    pub cols: usize,
    pub observations: Vec<PatchObservation>,
}

impl PatchGrid {
    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.observations.iter().map(|o| o.vector.clone()).collect()
    }
}

pub fn patchify(fp: &Fingerprint, side: usize) -> Result<PatchGrid> {
    let (h, w) = (fp.height(), fp.width());
    if side == 0 || h < side || w < side {
        return Err(Error::Sizing(format!("{h}x{w} fingerprint is smaller than a {side}x{side} patch")));
    }
    let (rows, cols) = (h / side, w / side);
    let offset = ((h - rows * side) / 2, (w - cols * side) / 2);
    let g = fp.values();
    let mut observations = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let (r0, c0) = (offset.0 + pr * side, offset.1 + pc * side);
            let mut vector = Vec::with_capacity(side * side);
            for r in r0..r0 + side {
                vector.extend(g.row(r)[c0..c0 + side].iter().map(|&v| v as f64));
            }
            observations.push(PatchObservation {
                vector,
                patch_row: pr,
                patch_col: pc,
            });
        }
    }
    Ok(PatchGrid {
        side,
        dims: (h, w),
        offset,
        rows,
        cols,
        observations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl GaussianMixture {
    /// `ln(w_c) + ln N(x | mu_c, diag(var_c))` per component.
    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        Prepared::new(self).log_joint(x)
    }

    /// Posterior component probabilities and the log marginal density.
    pub fn responsibilities(&self, x: &[f64]) -> (Vec<f64>, f64) {
        Prepared::new(self).responsibilities(x)
    }
}

/// Per-component constants and inverse variances for repeated evaluation.
struct Prepared<'a> {
    gmm: &'a GaussianMixture,
    consts: Vec<f64>,
    inv: Vec<Vec<f64>>,
}

impl<'a> Prepared<'a> {
    fn new(gmm: &'a GaussianMixture) -> Self {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let consts = gmm
            .variances
            .iter()
            .zip(&gmm.weights)
            .map(|(var, &wt)| wt.ln() - 0.5 * var.iter().map(|v| v.ln() + ln2pi).sum::<f64>())
            .collect();
        let inv = gmm.variances.iter().map(|v| v.iter().map(|x| 1.0 / x).collect()).collect();
        Self { gmm, consts, inv }
    }

    fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        self.gmm
            .means
            .iter()
            .zip(&self.inv)
            .zip(&self.consts)
            .map(|((mu, inv), &k)| {
                let mut s = 0.0;
                for ((&xi, &m), &iv) in x.iter().zip(mu).zip(inv) {
                    let d = xi - m;
                    s += d * d * iv;
                }
                k - 0.5 * s
            })
            .collect()
    }

    fn responsibilities(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let lj = self.log_joint(x);
        let m = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = lj.iter().map(|v| (v - m).exp()).sum();
        let ll = m + z.ln();
        (lj.iter().map(|v| (v - ll).exp()).collect(), ll)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClusterModel {
    Centroids(Vec<Vec<f64>>),
    Mixture(GaussianMixture),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster id (`0..k`) per observation.
    pub assignments: Vec<usize>,
    pub k: usize,
    pub model: ClusterModel,
    /// K-means: within-cluster sum of squares after each iteration.
    /// GMM: mean log-likelihood per observation at each E-step.
    pub trace: Vec<f64>,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmConfig {
    pub max_iter: usize,
    /// Stop when the per-observation log-likelihood gains less than this.
    pub tol: f64,
    pub var_floor: f64,
    pub kmeans: KMeansConfig,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            var_floor: 1e-6,
            kmeans: KMeansConfig::default(),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::Config("cluster count must be positive".into()));
    }
    if points.len() < k {
        return Err(Error::Capacity(format!("{} observations for {k} clusters", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Validation("observations differ in length".into()));
    }
    Ok(dim)
}

/// Nearest centroid, ties to the lowest id.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = sq_dist(p, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(wi) => wi.sample(rng),
            Err(_) => rng.random_range(0..points.len()),
        };
        centroids.push(points[pick].clone());
        let c = centroids.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

fn update_means(points: &[Vec<f64>], assign: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for ((c, s), n) in centroids.iter_mut().zip(sums).zip(counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
}

fn objective(points: &[Vec<f64>], assign: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(assign).map(|(p, &a)| sq_dist(p, &centroids[a])).sum()
}

/// Give every empty cluster the point farthest from its centroid, taken
/// from a cluster that keeps at least one member.
fn reseed_empty(points: &[Vec<f64>], assign: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[assign[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[assign[i]]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let Some((i, _)) = best else {
            return;
        };
        assign[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

fn lloyd(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let mut centroids = kmeans_pp(points, k, rng);
    let mut assign: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..max_iter {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assign {
            break;
        }
        assign = next;
        reseed_empty(points, &mut assign, &mut centroids);
        update_means(points, &assign, &mut centroids);
        trace.push(objective(points, &assign, &centroids));
    }
    (assign, centroids, trace)
}

/// K-means++ seeding, Lloyd iterations, best of `cfg.restarts` by objective.
pub fn kmeans_with(points: &[Vec<f64>], k: usize, cfg: &KMeansConfig, rng: &mut ChaCha8Rng) -> Result<Clustering> {
    check_points(points, k)?;
    let mut best: Option<Clustering> = None;
    for _ in 0..cfg.restarts.max(1) {
        let (assignments, centroids, trace) = lloyd(points, k, cfg.max_iter.max(1), rng);
        let obj = *trace.last().expect("at least one iteration");
        if best.as_ref().is_none_or(|b| obj < *b.trace.last().expect("non-empty")) {
            best = Some(Clustering {
                assignments,
                k,
                model: ClusterModel::Centroids(centroids),
                trace,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<Clustering> {
    kmeans_with(points, k, &KMeansConfig::default(), rng)
}

/// EM for a diagonal-covariance mixture, initialized from K-means.
pub fn gmm_em_with(points: &[Vec<f64>], k: usize, cfg: &GmmConfig, rng: &mut ChaCha8Rng) -> Result<Clustering> {
    let dim = check_points(points, k)?;
    let n = points.len();
    let init = kmeans_with(points, k, &cfg.kmeans, rng)?;
    let ClusterModel::Centroids(means) = init.model else {
        return Err(Error::Internal("kmeans returned a mixture".into()));
    };

    // Hard responsibilities from the K-means partition.
    let mut resp = vec![0.0; n * k];
    for (i, &a) in init.assignments.iter().enumerate() {
        resp[i * k + a] = 1.0;
    }
    let mut gmm = GaussianMixture {
        means,
        variances: vec![vec![1.0; dim]; k],
        weights: vec![1.0 / k as f64; k],
    };
    m_step(points, &resp, &mut gmm, cfg.var_floor);

    let mut trace: Vec<f64> = Vec::new();
    for it in 0..=cfg.max_iter {
        let mut ll = 0.0;
        let prep = Prepared::new(&gmm);
        for (i, p) in points.iter().enumerate() {
            let (r, l) = prep.responsibilities(p);
            resp[i * k..(i + 1) * k].copy_from_slice(&r);
            ll += l;
        }
        let ll = ll / n as f64;
        let converged = trace.last().is_some_and(|&prev| ll - prev < cfg.tol);
        trace.push(ll);
        if converged || it == cfg.max_iter {
            break;
        }
        m_step(points, &resp, &mut gmm, cfg.var_floor);
    }

    let assignments = (0..n)
        .map(|i| {
            let r = &resp[i * k..(i + 1) * k];
            let mut best = 0;
            for c in 1..k {
                if r[c] > r[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(Clustering {
        assignments,
        k,
        model: ClusterModel::Mixture(gmm),
        trace,
    })
}

pub fn gmm_em(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<Clustering> {
    gmm_em_with(points, k, &GmmConfig::default(), rng)
}

fn m_step(points: &[Vec<f64>], resp: &[f64], gmm: &mut GaussianMixture, floor: f64) {
    let k = gmm.weights.len();
    let n = points.len();
    for c in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
        if nk <= f64::MIN_POSITIVE {
            gmm.weights[c] = 0.0;
            continue;
        }
        let dim = points[0].len();
        let mut mean = vec![0.0; dim];
        for (i, p) in points.iter().enumerate() {
            let r = resp[i * k + c];
            if r != 0.0 {
                mean.iter_mut().zip(p).for_each(|(m, v)| *m += r * v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; dim];
        for (i, p) in points.iter().enumerate() {
            let r = resp[i * k + c];
            if r != 0.0 {
                for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                    *s += r * (v - m) * (v - m);
                }
            }
        }
        var.iter_mut().for_each(|s| *s = (*s / nk).max(floor));
        gmm.means[c] = mean;
        gmm.variances[c] = var;
        gmm.weights[c] = nk / n as f64;
    }
}

/// Coordinate sums of all pixels covered by one cluster's patches.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: i128,
    sr: i128,
    srr: i128,
    sc: i128,
    scc: i128,
}

impl Moments {
    fn add_patch(&mut self, pr: usize, pc: usize, side: usize) {
        let s = side as i128;
        let (r0, c0) = ((pr * side) as i128, (pc * side) as i128);
        // Each row index appears `side` times, as does each column index.
        for a in 0..s {
            self.sr += s * (r0 + a);
            self.srr += s * (r0 + a) * (r0 + a);
            self.sc += s * (c0 + a);
            self.scc += s * (c0 + a) * (c0 + a);
        }
        self.n += s * s;
    }

    /// Numerator of `(var_r + var_c) / 2` over the denominator `2 n^2`.
    fn score_numerator(&self) -> i128 {
        self.n * self.srr - self.sr * self.sr + self.n * self.scc - self.sc * self.sc
    }
}

/// The cluster whose member pixels have the smallest mean coordinate
/// variance; ties go to the lowest id.
pub fn select_compact_cluster(clust: &Clustering, grid: &PatchGrid) -> Result<usize> {
    if clust.assignments.len() != grid.observations.len() {
        return Err(Error::Validation(format!(
            "{} assignments for {} patches",
            clust.assignments.len(),
            grid.observations.len()
        )));
    }
    let mut m = vec![Moments::default(); clust.k];
    for (o, &a) in grid.observations.iter().zip(&clust.assignments) {
        m[a].add_patch(o.patch_row, o.patch_col, grid.side);
    }
    let mut best: Option<(usize, i128, i128)> = None;
    for (c, mc) in m.iter().enumerate() {
        if mc.n == 0 {
            continue;
        }
        let (num, den) = (mc.score_numerator(), mc.n * mc.n);
        let better = match best {
            None => true,
            Some((_, bn, bd)) => {
                let lhs = num.checked_mul(bd);
                let rhs = bn.checked_mul(den);
                match (lhs, rhs) {
                    (Some(l), Some(r)) => l < r,
                    _ => (num as f64 / den as f64) < (bn as f64 / bd as f64),
                }
            }
        };
        if better {
            best = Some((c, num, den));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::Internal("every cluster is empty".into()))
}

/// Mark the pixels of cluster `c`'s patches; cropped margins stay 0.
pub fn cluster_to_mask(clust: &Clustering, c: usize, grid: &PatchGrid) -> TamperMask {
    let (h, w) = grid.dims;
    let mut mask = TamperMask::zeros(h, w);
    for (o, &a) in grid.observations.iter().zip(&clust.assignments) {
        if a != c {
            continue;
        }
        let (r0, c0) = (grid.offset.0 + o.patch_row * grid.side, grid.offset.1 + o.patch_col * grid.side);
        for r in r0..r0 + grid.side {
            for cc in c0..c0 + grid.side {
                mask.set(r, cc, true);
            }
        }
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    Kmeans,
    Gmm,
}

/// Full clustering route: patchify, cluster, select, rasterize.
pub fn cluster_mask(fp: &Fingerprint, method: ClusterMethod, k: usize, seed: u64) -> Result<TamperMask> {
    let grid = patchify(fp, PATCH_SIDE)?;
    let points = grid.vectors();
    let mut rng = seeds::rng(seed, 40, 0);
    let clust = match method {
        ClusterMethod::Kmeans => kmeans(&points, k, &mut rng)?,
        ClusterMethod::Gmm => gmm_em(&points, k, &mut rng)?,
    };
    let c = select_compact_cluster(&clust, &grid)?;
    Ok(cluster_to_mask(&clust, c, &grid))
}

/// Pixels with probability `>= tau` become 1.
pub fn threshold(prob: &Grid, tau: f32) -> TamperMask {
    let bits = prob.data().iter().map(|&p| u8::from(p >= tau)).collect();
    TamperMask::new(prob.height(), prob.width(), bits).expect("dims taken from a grid")
}

pub const UNET_LEVELS: usize = 3;

/// Encoder widths `base * 2^l` for `l in 0..levels`, a `base * 2^levels`
/// bottleneck, nearest upsampling with skip concatenation, sigmoid head.
pub fn unet_spec(base: usize, seed: u64) -> NetworkSpec {
    let mut layers = Vec::new();
    let block = |layers: &mut Vec<LayerSpec>, ch: usize| {
        for _ in 0..2 {
            layers.extend([
                LayerSpec::Conv2d {
                    out_ch: ch,
                    k: 3,
                    pad: 1,
                    bias: false,
                },
                LayerSpec::BatchNorm { ch },
                LayerSpec::Relu,
            ]);
        }
    };
    let mut skips = Vec::new();
    for l in 0..UNET_LEVELS {
        block(&mut layers, base << l);
        skips.push(layers.len() - 1);
        layers.push(LayerSpec::MaxPool2);
    }
    block(&mut layers, base << UNET_LEVELS);
    for l in (0..UNET_LEVELS).rev() {
        layers.push(LayerSpec::UpsampleNearest2);
        layers.push(LayerSpec::Concat { skip: skips[l] });
        block(&mut layers, base << l);
    }
    layers.push(LayerSpec::Conv2d {
        out_ch: 1,
        k: 1,
        pad: 0,
        bias: true,
    });
    layers.push(LayerSpec::Sigmoid);
    NetworkSpec { in_ch: 1, layers, seed }
}

/// Reflect-pad so both sides become multiples of `m`, split evenly.
fn pad_to_multiple(g: &Grid, m: usize) -> (Grid, usize, usize) {
    let (h, w) = g.dims();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let (top, left) = ((ph - h) / 2, (pw - w) / 2);
    if ph == h && pw == w {
        return (g.clone(), 0, 0);
    }
    let out = Grid::from_fn(ph, pw, |r, c| {
        g.get(
            reflect_index(r as isize - top as isize, h),
            reflect_index(c as isize - left as isize, w),
        )
    });
    (out, top, left)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnetConfig {
    pub base_width: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Multiply the learning rate by `lr_decay` after this many epochs without improvement.
    pub plateau_patience: usize,
    pub lr_decay: f64,
    pub early_stop_patience: usize,
    pub batch: usize,
    /// Side of the random training crops (a multiple of 8); `None` trains on full fingerprints.
    pub crop: Option<usize>,
    pub seed: u64,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self {
            base_width: 16,
            lr: 1e-4,
            max_epochs: 200,
            plateau_patience: 10,
            lr_decay: 0.1,
            early_stop_patience: 30,
            batch: 4,
            crop: Some(128),
            seed: 0,
        }
    }
}

impl UnetConfig {
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 12,
            ..Self::default()
        }
    }
}

/// A standardized fingerprint with its ground-truth mask.
#[derive(Debug, Clone)]
pub struct SegSample {
    pub fp: Grid,
    pub mask: TamperMask,
}

#[derive(Debug, Clone)]
pub struct Unet {
    pub id: String,
    /// Extractor whose fingerprints this model segments.
    pub extractor_id: String,
    pub config: UnetConfig,
    net: Network<f32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnetEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnetLog {
    pub epochs: Vec<UnetEpoch>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl Unet {
    pub fn new(id: impl Into<String>, extractor_id: impl Into<String>, config: UnetConfig) -> Result<Self> {
        let net = Network::new(unet_spec(config.base_width, config.seed))?;
        Ok(Self {
            id: id.into(),
            extractor_id: extractor_id.into(),
            config,
            net,
        })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    /// Probability map with the fingerprint's dimensions.
    pub fn predict(&self, fp: &Grid) -> Result<Grid> {
        let m = 1 << UNET_LEVELS;
        let (padded, top, left) = pad_to_multiple(fp, m);
        let x = Tensor::from_vec(Shape::new(1, 1, padded.height(), padded.width()), padded.into_vec())?;
        let y = self.net.infer(&x)?;
        let s = y.shape();
        let full = Grid::new(s.h, s.w, y.into_vec())?;
        full.crop(top, left, fp.height(), fp.width())
    }

    pub fn to_params(&self, log: Option<&UnetLog>) -> ModelParams {
        let metadata = serde_json::json!({
            "config": self.config,
            "extractor_id": self.extractor_id,
            "log": log,
        });
        ModelParams::from_network(ModelKind::Unet, self.id.clone(), &self.net, metadata)
    }

    pub fn from_params(params: &ModelParams) -> Result<Self> {
        if params.kind != ModelKind::Unet {
            return Err(Error::Model(format!("{} is not a U-Net", params.id)));
        }
        let config: UnetConfig = serde_json::from_value(params.metadata["config"].clone())
            .map_err(|e| Error::Model(format!("{}: bad config metadata: {e}", params.id)))?;
        let extractor_id = params.metadata["extractor_id"].as_str().unwrap_or_default().to_string();
        Ok(Self {
            id: params.id.clone(),
            extractor_id,
            config,
            net: params.to_network()?,
        })
    }
}

/// Probability map and its thresholded mask.
pub fn unet_estimate(model: &Unet, fp: &Fingerprint, tau: f32) -> Result<(TamperMask, Grid)> {
    let prob = model.predict(fp.values())?;
    Ok((threshold(&prob, tau), prob))
}

fn crop_pair(s: &SegSample, side: Option<usize>, rng: &mut ChaCha8Rng) -> Result<(Vec<f32>, Vec<f32>, usize, usize)> {
    let (h, w) = s.fp.dims();
    let (ch, cw) = match side {
        Some(c) => (c.min(h / 8 * 8), c.min(w / 8 * 8)),
        None => (h / 8 * 8, w / 8 * 8),
    };
    if ch == 0 || cw == 0 {
        return Err(Error::Sizing(format!("{h}x{w} fingerprint is too small for the U-Net")));
    }
    let r = rng.random_range(0..=h - ch);
    let c = rng.random_range(0..=w - cw);
    let x = s.fp.crop(r, c, ch, cw)?.into_vec();
    let mut y = Vec::with_capacity(ch * cw);
    for rr in r..r + ch {
        y.extend((c..c + cw).map(|cc| if s.mask.get(rr, cc) { 1.0 } else { 0.0 }));
    }
    Ok((x, y, ch, cw))
}

fn make_batch(items: &[(Vec<f32>, Vec<f32>, usize, usize)]) -> Result<(Tensor<f32>, Vec<f32>)> {
    let (h, w) = (items[0].2, items[0].3);
    if items.iter().any(|i| i.2 != h || i.3 != w) {
        return Err(Error::Sizing("U-Net batch items differ in size".into()));
    }
    let mut x = Vec::with_capacity(items.len() * h * w);
    let mut y = Vec::with_capacity(items.len() * h * w);
    for (xi, yi, _, _) in items {
        x.extend_from_slice(xi);
        y.extend_from_slice(yi);
    }
    Ok((Tensor::from_vec(Shape::new(items.len(), 1, h, w), x)?, y))
}

/// Adam on Dice + Focal with plateau decay, early stopping and best-checkpoint
/// restore. `samples` are split 50/50 (after a seeded shuffle) into train and validation.
pub fn train_unet(samples: &[SegSample], extractor_id: &str, cfg: &UnetConfig) -> Result<(Unet, UnetLog)> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut seeds::rng(cfg.seed, 50, 0));
    let cut = samples.len() / 2;
    let (val_idx, train_idx) = order.split_at(cut);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Config(format!("{} samples leave an empty train or validation split", samples.len())));
    }
    let train: Vec<&SegSample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val: Vec<&SegSample> = val_idx.iter().map(|&i| &samples[i]).collect();
    train_unet_split(&train, &val, extractor_id, cfg)
}

/// [`train_unet`] with an explicit split.
pub fn train_unet_split(train: &[&SegSample], val: &[&SegSample], extractor_id: &str, cfg: &UnetConfig) -> Result<(Unet, UnetLog)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("empty U-Net train or validation split".into()));
    }
    if cfg.batch == 0 || cfg.max_epochs == 0 {
        return Err(Error::Config("batch size and epoch count must be positive".into()));
    }
    let loss_fn = DiceFocal::default();
    let mut unet = Unet::new(format!("unet-{extractor_id}"), extractor_id, cfg.clone())?;
    let mut adam = AdamState::for_network(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &unet.net,
    );

    let mut vrng = seeds::rng(cfg.seed, 51, 0);
    let val_set: Vec<_> = val
        .iter()
        .map(|s| crop_pair(s, cfg.crop, &mut vrng))
        .collect::<Result<_>>()?;

    let mut rng = seeds::rng(cfg.seed, 52, 0);
    let mut log = UnetLog {
        best_val_loss: f64::INFINITY,
        ..UnetLog::default()
    };
    let mut best_state = unet.net.export_state();
    let mut last_change = 0;
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(cfg.batch) {
            let items = chunk
                .iter()
                .map(|&i| crop_pair(train[i], cfg.crop, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let (x, y) = make_batch(&items)?;
            let pass = unet.net.forward(&x, Mode::Train)?;
            let seg = loss_fn.evaluate(pass.output.data(), &y)?;
            let upstream = Tensor::from_vec(pass.output.shape(), seg.grad)?;
            let grads = unet.net.backward(&pass, &upstream)?;
            adam.step_network(&mut unet.net, &grads.params)?;
            total += seg.loss;
            batches += 1;
        }
        let mut vtotal = 0.0;
        for item in &val_set {
            let (x, y) = make_batch(std::slice::from_ref(item))?;
            let out = unet.net.infer(&x)?;
            vtotal += loss_fn.evaluate(out.data(), &y)?.loss;
        }
        let val_loss = vtotal / val_set.len() as f64;
        log.epochs.push(UnetEpoch {
            epoch,
            train_loss: total / batches as f64,
            val_loss,
            lr: adam.lr(),
        });
        log::info!("unet epoch {epoch}: train {:.5} val {val_loss:.5} lr {:.1e}", total / batches as f64, adam.lr());
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best_state = unet.net.export_state();
            last_change = epoch;
            continue;
        }
        let stale = epoch - log.best_epoch;
        if stale >= cfg.early_stop_patience {
            log.stopped_early = true;
            break;
        }
        if epoch - last_change >= cfg.plateau_patience {
            adam.set_lr(adam.lr() * cfg.lr_decay);
            last_change = epoch;
        }
    }
    unet.net.import_state(&best_state)?;
    Ok((unet, log))
}
