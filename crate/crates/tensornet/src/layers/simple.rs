use rayon::prelude::*;

use crate::{Scalar, Shape, Tensor};

pub(crate) fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    out.data_mut()
        .par_iter_mut()
        .for_each(|v| *v = v.max(T::zero()));
    out
}

/// Uses the forward output: the derivative is 1 where the output is positive.
pub(crate) fn relu_backward<T: Scalar>(y: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
    let mut gin = gout.clone();
    gin.data_mut()
        .par_iter_mut()
        .zip(y.data().par_iter())
        .for_each(|(g, &v)| {
            if v <= T::zero() {
                *g = T::zero();
            }
        });
    gin
}

pub(crate) fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    out.data_mut().par_iter_mut().for_each(|v| {
        // Split by sign so exp never overflows.
        *v = if *v >= T::zero() {
            T::one() / (T::one() + (-*v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        };
    });
    out
}

pub(crate) fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
    let mut gin = gout.clone();
    gin.data_mut()
        .par_iter_mut()
        .zip(y.data().par_iter())
        .for_each(|(g, &v)| *g *= v * (T::one() - v));
    gin
}

pub(crate) fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(x.data().par_chunks(s.plane()))
        .for_each(|(dst, src)| {
            for y in 0..oh {
                for xo in 0..ow {
                    let i = 2 * y * s.w + 2 * xo;
                    let a = src[i].max(src[i + 1]);
                    let b = src[i + s.w].max(src[i + s.w + 1]);
                    dst[y * ow + xo] = a.max(b);
                }
            }
        });
    out
}

/// Routes each pooled gradient to the first maximal element of its window
/// (row-major order).
pub(crate) fn max_pool2_backward<T: Scalar>(x: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut gin = Tensor::zeros(s);
    gin.data_mut()
        .par_chunks_mut(s.plane())
        .zip(x.data().par_chunks(s.plane()))
        .zip(gout.data().par_chunks(oh * ow))
        .for_each(|((dst, src), g)| {
            for y in 0..oh {
                for xo in 0..ow {
                    let base = 2 * y * s.w + 2 * xo;
                    let cand = [base, base + 1, base + s.w, base + s.w + 1];
                    let mut best = cand[0];
                    for &c in &cand[1..] {
                        if src[c] > src[best] {
                            best = c;
                        }
                    }
                    dst[best] += g[y * ow + xo];
                }
            }
        });
    gin
}

pub(crate) fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (oh, ow) = (s.h * 2, s.w * 2);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(x.data().par_chunks(s.plane()))
        .for_each(|(dst, src)| {
            for y in 0..oh {
                let srow = &src[(y / 2) * s.w..(y / 2 + 1) * s.w];
                for (xo, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                    *d = srow[xo / 2];
                }
            }
        });
    out
}

pub(crate) fn upsample2_backward<T: Scalar>(in_shape: Shape, gout: &Tensor<T>) -> Tensor<T> {
    let go = gout.shape();
    let mut gin = Tensor::zeros(in_shape);
    gin.data_mut()
        .par_chunks_mut(in_shape.plane())
        .zip(gout.data().par_chunks(go.plane()))
        .for_each(|(dst, g)| {
            for y in 0..go.h {
                for x in 0..go.w {
                    dst[(y / 2) * in_shape.w + x / 2] += g[y * go.w + x];
                }
            }
        });
    gin
}

/// Channel concatenation `[a, b]` per batch sample.
pub(crate) fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (sa, sb) = (a.shape(), b.shape());
    let shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..sa.n {
        data.extend_from_slice(a.sample(n));
        data.extend_from_slice(b.sample(n));
    }
    Tensor::from_vec(shape, data).expect("concat shape")
}

pub(crate) fn concat_backward<T: Scalar>(
    gout: &Tensor<T>,
    a_ch: usize,
) -> (Tensor<T>, Tensor<T>) {
    let s = gout.shape();
    let b_ch = s.c - a_ch;
    let na = a_ch * s.plane();
    let mut ga = Vec::with_capacity(s.n * na);
    let mut gb = Vec::with_capacity(s.n * b_ch * s.plane());
    for n in 0..s.n {
        let sample = gout.sample(n);
        ga.extend_from_slice(&sample[..na]);
        gb.extend_from_slice(&sample[na..]);
    }
    (
        Tensor::from_vec(Shape::new(s.n, a_ch, s.h, s.w), ga).expect("concat grad"),
        Tensor::from_vec(Shape::new(s.n, b_ch, s.h, s.w), gb).expect("concat grad"),
    )
}
