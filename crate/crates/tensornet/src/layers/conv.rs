use rayon::prelude::*;

use crate::scalar::{gemm, Strides};
use crate::{Scalar, Shape, Tensor};

/// Upper bound on the im2col buffer, in elements.
const BAND_ELEMS: usize = 1 << 18;

/// Stride-1 2-D cross-correlation with symmetric zero padding.
#[derive(Debug, Clone)]
pub(crate) struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub pad: usize,
    /// `[out_ch][in_ch][k][k]`
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

/// Output columns `lo..hi` whose input column `o + kx - pad` lies in `0..w`.
#[inline]
fn valid_span(kx: usize, pad: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx);
    let hi = ow.min((w + pad).saturating_sub(kx));
    (lo, hi.max(lo))
}

impl<T: Scalar> Conv2d<T> {
    pub fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let oh = (h + 2 * self.pad).checked_sub(self.k)? + 1;
        let ow = (w + 2 * self.pad).checked_sub(self.k)? + 1;
        Some((oh, ow))
    }

    /// Rows of the unrolled patch matrix.
    fn taps(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    fn band_rows(&self, ow: usize) -> usize {
        (BAND_ELEMS / (self.taps() * ow).max(1)).max(1)
    }

    /// Unroll output rows `y0..y1` into a `taps x ((y1 - y0) * ow)` matrix.
    #[allow(clippy::too_many_arguments)]
    fn im2col(&self, input: &[T], h: usize, w: usize, ow: usize, y0: usize, y1: usize, cols: &mut Vec<T>) {
        let (k, pad) = (self.k, self.pad);
        let npix = (y1 - y0) * ow;
        cols.clear();
        cols.resize(self.taps() * npix, T::zero());
        for ic in 0..self.in_ch {
            let chan = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ic * k + ky) * k + kx;
                    let dst = &mut cols[row * npix..(row + 1) * npix];
                    let (lo, hi) = valid_span(kx, pad, w, ow);
                    if lo >= hi {
                        continue;
                    }
                    for y in y0..y1 {
                        let iy = y + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let irow = &chan[(iy - pad) * w..(iy - pad + 1) * w];
                        let o = (y - y0) * ow;
                        dst[o + lo..o + hi].copy_from_slice(&irow[lo + kx - pad..hi + kx - pad]);
                    }
                }
            }
        }
    }

    /// Scatter-add an unrolled gradient back onto the input plane set.
    #[allow(clippy::too_many_arguments)]
    fn col2im(&self, cols: &[T], h: usize, w: usize, ow: usize, y0: usize, y1: usize, gin: &mut [T]) {
        let (k, pad) = (self.k, self.pad);
        let npix = (y1 - y0) * ow;
        for ic in 0..self.in_ch {
            let chan = &mut gin[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ic * k + ky) * k + kx;
                    let src = &cols[row * npix..(row + 1) * npix];
                    let (lo, hi) = valid_span(kx, pad, w, ow);
                    if lo >= hi {
                        continue;
                    }
                    for y in y0..y1 {
                        let iy = y + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let irow = &mut chan[(iy - pad) * w..(iy - pad + 1) * w];
                        let o = (y - y0) * ow;
                        for (g, &v) in irow[lo + kx - pad..hi + kx - pad].iter_mut().zip(&src[o + lo..o + hi]) {
                            *g += v;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = x.shape();
        let (oh, ow) = self.out_dims(s.h, s.w).expect("validated by caller");
        let mut out = Tensor::zeros(Shape::new(s.n, self.out_ch, oh, ow));
        let plane = oh * ow;
        let taps = self.taps();
        let band = self.band_rows(ow);
        out.data_mut()
            .par_chunks_mut(self.out_ch * plane)
            .enumerate()
            .for_each(|(n, dst)| {
                let mut cols = Vec::new();
                for y0 in (0..oh).step_by(band) {
                    let y1 = (y0 + band).min(oh);
                    let npix = (y1 - y0) * ow;
                    self.im2col(x.sample(n), s.h, s.w, ow, y0, y1, &mut cols);
                    gemm(
                        self.out_ch,
                        taps,
                        npix,
                        &self.weight,
                        Strides::row_major(taps),
                        &cols,
                        Strides::row_major(npix),
                        T::zero(),
                        &mut dst[y0 * ow..],
                        Strides::row_major(plane),
                    );
                }
                if let Some(b) = &self.bias {
                    for (chan, &bv) in dst.chunks_mut(plane).zip(b) {
                        chan.iter_mut().for_each(|v| *v += bv);
                    }
                }
            });
        out
    }

    /// Returns `(input_grad, weight_grad, bias_grad)`.
    ///
    /// Per-sample weight gradients come from `T` GEMMs and are summed over
    /// the batch in `f64`.
    pub fn backward(&self, x: &Tensor<T>, gout: &Tensor<T>) -> (Tensor<T>, Vec<T>, Option<Vec<T>>) {
        let s = x.shape();
        let go = gout.shape();
        let (h, w, oh, ow) = (s.h, s.w, go.h, go.w);
        let plane = oh * ow;
        let taps = self.taps();
        let band = self.band_rows(ow);

        let mut gin = Tensor::zeros(s);
        let partials: Vec<(Vec<T>, Vec<f64>)> = gin
            .data_mut()
            .par_chunks_mut(self.in_ch * h * w)
            .enumerate()
            .map(|(n, gdst)| {
                let g = gout.sample(n);
                let mut gw = vec![T::zero(); self.out_ch * taps];
                let mut cols = Vec::new();
                let mut gcols = Vec::new();
                for y0 in (0..oh).step_by(band) {
                    let y1 = (y0 + band).min(oh);
                    let npix = (y1 - y0) * ow;
                    self.im2col(x.sample(n), h, w, ow, y0, y1, &mut cols);
                    let gband = &g[y0 * ow..];
                    // gw += gout_band * cols^T
                    gemm(
                        self.out_ch,
                        npix,
                        taps,
                        gband,
                        Strides::row_major(plane),
                        &cols,
                        Strides::col_major(npix),
                        T::one(),
                        &mut gw,
                        Strides::row_major(taps),
                    );
                    // gcols = W^T * gout_band
                    gcols.clear();
                    gcols.resize(taps * npix, T::zero());
                    gemm(
                        taps,
                        self.out_ch,
                        npix,
                        &self.weight,
                        Strides::col_major(taps),
                        gband,
                        Strides::row_major(plane),
                        T::zero(),
                        &mut gcols,
                        Strides::row_major(npix),
                    );
                    self.col2im(&gcols, h, w, ow, y0, y1, gdst);
                }
                let gb = g
                    .chunks(plane)
                    .map(|c| c.iter().map(|v| v.as_f64()).sum::<f64>())
                    .collect();
                (gw, gb)
            })
            .collect();

        let mut gw = vec![0.0f64; self.out_ch * taps];
        let mut gb = vec![0.0f64; self.out_ch];
        for (pw, pb) in partials {
            gw.iter_mut().zip(pw).for_each(|(a, b)| *a += b.as_f64());
            gb.iter_mut().zip(pb).for_each(|(a, b)| *a += b);
        }
        let gw = gw.into_iter().map(T::from_f64).collect();
        let gb = self.bias.as_ref().map(|_| gb.into_iter().map(T::from_f64).collect());
        (gin, gw, gb)
    }
}
