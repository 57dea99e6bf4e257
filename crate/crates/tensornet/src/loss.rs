//! Training objectives: the distance-based logistic loss used to learn
//! product-consistent fingerprints, and the Dice + Focal segmentation loss.

use rayon::prelude::*;

use crate::{NetError, Result, Scalar};

/// Symmetric pairwise labels; `true` marks a consistent (positive) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairLabels {
    n: usize,
    bits: Vec<bool>,
}

impl PairLabels {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    bits[i * n + j] = f(i, j);
                }
            }
        }
        Self { n, bits }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn positive_pairs(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count() / 2
    }
}

#[derive(Debug, Clone)]
pub struct DblOutput<T> {
    pub loss: f64,
    /// Gradient w.r.t. the flattened fingerprints, row-major `n x dim`.
    pub grad: Vec<T>,
    /// Anchors that had at least one positive partner.
    pub anchors: usize,
}

/// Squared Euclidean distances between all rows of `x` (`n x dim`).
pub fn pairwise_sq_distances<T: Scalar>(x: &[T], n: usize, dim: usize) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &x[i * dim..(i + 1) * dim];
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let xj = &x[j * dim..(j + 1) * dim];
                    xi.iter()
                        .zip(xj)
                        .map(|(a, b)| {
                            let d = a.as_f64() - b.as_f64();
                            d * d
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    rows.concat()
}

/// Loss value and its derivative w.r.t. every pairwise squared distance.
#[derive(Debug, Clone)]
pub struct DblFromDistances {
    pub loss: f64,
    /// Symmetric `n x n` matrix of `d loss / d d_ij` (pairs counted once).
    pub dloss_ddist: Vec<f64>,
    pub anchors: usize,
}

/// Distance-based logistic loss on a precomputed squared-distance matrix.
///
/// For each anchor `i`, `p_ij = softmax_j(-d_ij)` over all `j != i`, and the
/// anchor loss is `-ln(sum of p_ij over positives j)`. The batch loss is the
/// mean over anchors with at least one positive; other anchors are skipped.
pub fn dbl_from_distances(d: &[f64], labels: &PairLabels) -> Result<DblFromDistances> {
    let n = labels.len();
    if n < 2 {
        return Err(NetError::DegenerateBatch("need at least 2 fingerprints".into()));
    }
    if d.len() != n * n {
        return Err(NetError::Shape(format!("{} distances for {n} x {n}", d.len())));
    }

    // coef[j] = d loss_i / d d_ij for one anchor.
    let per_anchor: Vec<Option<(f64, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !(0..n).any(|j| j != i && labels.get(i, j)) {
                return None;
            }
            // Separate log-sum-exp shifts for all pairs and for positives.
            let (mut shift, mut shift_pos) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for j in (0..n).filter(|&j| j != i) {
                shift = shift.max(-d[i * n + j]);
                if labels.get(i, j) {
                    shift_pos = shift_pos.max(-d[i * n + j]);
                }
            }
            let (mut z_all, mut z_pos) = (0.0, 0.0);
            for j in (0..n).filter(|&j| j != i) {
                z_all += (-d[i * n + j] - shift).exp();
                if labels.get(i, j) {
                    z_pos += (-d[i * n + j] - shift_pos).exp();
                }
            }
            // loss_i = ln z_all - ln z_pos; d/d(logit_ij) = p_ij - q_ij with logit = -d.
            let loss = (shift + z_all.ln()) - (shift_pos + z_pos.ln());
            let coef = (0..n)
                .map(|j| {
                    if j == i {
                        return 0.0;
                    }
                    let p = (-d[i * n + j] - shift).exp() / z_all;
                    let q = if labels.get(i, j) {
                        (-d[i * n + j] - shift_pos).exp() / z_pos
                    } else {
                        0.0
                    };
                    q - p
                })
                .collect();
            Some((loss, coef))
        })
        .collect();

    let anchors = per_anchor.iter().filter(|a| a.is_some()).count();
    if anchors == 0 {
        return Err(NetError::DegenerateBatch(
            "no anchor has a positive partner".into(),
        ));
    }
    let scale = 1.0 / anchors as f64;
    let mut loss = 0.0;
    let mut s = vec![0.0f64; n * n];
    for (i, a) in per_anchor.into_iter().enumerate() {
        if let Some((l, coef)) = a {
            loss += l;
            for j in 0..n {
                s[i * n + j] += coef[j] * scale;
                s[j * n + i] += coef[j] * scale;
            }
        }
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(NetError::NonFinite("dbl loss".into()));
    }
    Ok(DblFromDistances {
        loss,
        dloss_ddist: s,
        anchors,
    })
}

/// [`dbl_from_distances`] on raw fingerprints, with the gradient w.r.t. them.
pub fn dbl_loss<T: Scalar>(
    fingerprints: &[T],
    dim: usize,
    labels: &PairLabels,
) -> Result<DblOutput<T>> {
    let n = labels.len();
    if dim == 0 || fingerprints.len() != n * dim {
        return Err(NetError::Shape(format!(
            "{} fingerprint values for {n} x {dim}",
            fingerprints.len()
        )));
    }
    let d = pairwise_sq_distances(fingerprints, n, dim);
    let DblFromDistances {
        loss,
        dloss_ddist: s,
        anchors,
    } = dbl_from_distances(&d, labels)?;

    // dL/df_i = 2 * sum_j s_ij (f_i - f_j), s symmetric.
    let grad: Vec<T> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut g = vec![0.0f64; dim];
            let xi = &fingerprints[i * dim..(i + 1) * dim];
            for j in 0..n {
                let sij = s[i * n + j];
                if sij == 0.0 {
                    continue;
                }
                let xj = &fingerprints[j * dim..(j + 1) * dim];
                for ((gk, a), b) in g.iter_mut().zip(xi).zip(xj) {
                    *gk += 2.0 * sij * (a.as_f64() - b.as_f64());
                }
            }
            g.into_iter().map(T::from_f64)
        })
        .collect();

    Ok(DblOutput {
        loss,
        grad,
        anchors,
    })
}

/// Dice + Focal loss on probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiceFocal {
    pub smooth: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for DiceFocal {
    fn default() -> Self {
        Self {
            smooth: 1.0,
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SegLoss<T> {
    pub loss: f64,
    pub dice: f64,
    pub focal: f64,
    /// Gradient w.r.t. the predicted probabilities.
    pub grad: Vec<T>,
}

/// Probabilities are clamped into this band before any log is taken.
pub const PROB_CLAMP: f64 = 1e-7;

impl DiceFocal {
    /// `pred` holds probabilities, `truth` holds 0/1 targets of the same length.
    /// Clamped predictions receive zero gradient.
    pub fn evaluate<T: Scalar>(&self, pred: &[T], truth: &[T]) -> Result<SegLoss<T>> {
        if pred.len() != truth.len() || pred.is_empty() {
            return Err(NetError::Shape(format!(
                "prediction has {} values, truth {}",
                pred.len(),
                truth.len()
            )));
        }
        let n = pred.len() as f64;
        let lo = PROB_CLAMP;
        let hi = 1.0 - PROB_CLAMP;
        let (mut inter, mut psum, mut tsum, mut focal) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (p, t) in pred.iter().zip(truth) {
            let p = p.as_f64().clamp(lo, hi);
            let t = t.as_f64();
            inter += p * t;
            psum += p;
            tsum += t;
            focal += self.focal_term(p, t);
        }
        let denom = psum + tsum + self.smooth;
        let numer = 2.0 * inter + self.smooth;
        let dice = 1.0 - numer / denom;
        let focal = focal / n;

        let grad = pred
            .iter()
            .zip(truth)
            .map(|(p, t)| {
                let raw = p.as_f64();
                if raw < lo || raw > hi {
                    return T::zero();
                }
                let t = t.as_f64();
                let gd = -(2.0 * t * denom - numer) / (denom * denom);
                T::from_f64(gd + self.focal_grad(raw, t) / n)
            })
            .collect();

        Ok(SegLoss {
            loss: dice + focal,
            dice,
            focal,
            grad,
        })
    }

    fn focal_term(&self, p: f64, t: f64) -> f64 {
        // Soft targets interpolate between the two one-sided terms.
        let pos = -self.alpha * (1.0 - p).powf(self.gamma) * p.ln();
        let neg = -self.alpha * p.powf(self.gamma) * (1.0 - p).ln();
        t * pos + (1.0 - t) * neg
    }

    fn focal_grad(&self, p: f64, t: f64) -> f64 {
        let g = self.gamma;
        let a = self.alpha;
        let dpos = a * (g * (1.0 - p).powf(g - 1.0) * p.ln() - (1.0 - p).powf(g) / p);
        let dneg = -a * (g * p.powf(g - 1.0) * (1.0 - p).ln() - p.powf(g) / (1.0 - p));
        t * dpos + (1.0 - t) * dneg
    }
}
