//! Cross-correlation convolutions via im2col + GEMM, with zero padding.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Stride and zero padding along the (row, column) axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geo: Conv2dGeometry,
}

impl Dims {
    fn ckk(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_px(&self) -> usize {
        self.ho * self.wo
    }
}

fn out_extent(axis: &str, len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Dimension(format!("{axis}: stride must be positive")));
    }
    let padded = len + 2 * pad;
    if k > padded {
        return Err(Error::Dimension(format!(
            "{axis}: kernel extent {k} exceeds padded input extent {padded}"
        )));
    }
    if (padded - k) % stride != 0 {
        return Err(Error::Dimension(format!(
            "{axis}: non-integral output extent ({padded} - {k}) / {stride}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

fn im2col<T: Scalar>(x: &[T], d: &Dims, col: &mut [T]) {
    let (sh, sw) = d.geo.stride;
    let (ph, pw) = d.geo.padding;
    let px = d.out_px();
    for ci in 0..d.cin {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = &mut col[((ci * d.kh + i) * d.kw + j) * px..][..px];
                for oy in 0..d.ho {
                    let y = (oy * sh + i) as isize - ph as isize;
                    let dst = &mut row[oy * d.wo..(oy + 1) * d.wo];
                    if y < 0 || y >= d.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[y as usize * d.w..(y as usize + 1) * d.w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let xx = (ox * sw + j) as isize - pw as isize;
                        *v = if xx < 0 || xx >= d.w as isize {
                            T::zero()
                        } else {
                            src[xx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(col: &[T], d: &Dims, dx: &mut [T]) {
    let (sh, sw) = d.geo.stride;
    let (ph, pw) = d.geo.padding;
    let px = d.out_px();
    for ci in 0..d.cin {
        let plane = &mut dx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = &col[((ci * d.kh + i) * d.kw + j) * px..][..px];
                for oy in 0..d.ho {
                    let y = (oy * sh + i) as isize - ph as isize;
                    if y < 0 || y >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * d.w..(y as usize + 1) * d.w];
                    for (ox, &v) in row[oy * d.wo..(oy + 1) * d.wo].iter().enumerate() {
                        let xx = (ox * sw + j) as isize - pw as isize;
                        if xx >= 0 && xx < d.w as isize {
                            dst[xx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_general<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    geo: Conv2dGeometry,
) -> Result<(Tensor<T>, Dims)> {
    let [n, cin, h, w] = *input.shape() else {
        return Err(Error::Dimension(format!(
            "conv2d: input must be [batch, channels, h, w], got {:?}",
            input.shape()
        )));
    };
    let [cout, kcin, kh, kw] = *kernel.shape() else {
        return Err(Error::Dimension(format!(
            "conv2d: kernel must be [cout, cin, kh, kw], got {:?}",
            kernel.shape()
        )));
    };
    if kcin != cin {
        return Err(Error::Dimension(format!(
            "conv2d: kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    let ho = out_extent("conv rows", h, kh, geo.stride.0, geo.padding.0)?;
    let wo = out_extent("conv cols", w, kw, geo.stride.1, geo.padding.1)?;
    let d = Dims {
        cin,
        h,
        w,
        kh,
        kw,
        ho,
        wo,
        geo,
    };

    let (ckk, px) = (d.ckk(), d.out_px());
    let in_stride = cin * h * w;
    let out_stride = cout * px;
    let mut out = vec![T::zero(); n * out_stride];
    let mut col = vec![T::zero(); ckk * px];
    for b in 0..n {
        im2col(&input.data()[b * in_stride..(b + 1) * in_stride], &d, &mut col);
        T::gemm(
            cout,
            ckk,
            px,
            T::one(),
            kernel.data(),
            (ckk as isize, 1),
            &col,
            (px as isize, 1),
            T::zero(),
            &mut out[b * out_stride..(b + 1) * out_stride],
            (px as isize, 1),
        );
    }

    let (x, k) = (input.clone(), kernel.clone());
    let t = Tensor::from_op(
        "conv",
        out,
        &[n, cout, ho, wo],
        vec![input.clone(), kernel.clone()],
        Box::new(move |g| {
            let mut col = vec![T::zero(); ckk * px];
            let mut dcol = vec![T::zero(); ckk * px];
            let mut dx = x.requires_grad().then(|| vec![T::zero(); n * in_stride]);
            let mut dk = k.requires_grad().then(|| vec![T::zero(); cout * ckk]);
            for b in 0..n {
                let gb = &g[b * out_stride..(b + 1) * out_stride];
                if let Some(dk) = dk.as_mut() {
                    im2col(&x.data()[b * in_stride..(b + 1) * in_stride], &d, &mut col);
                    // dK += dOut_b * col_b^T
                    T::gemm(
                        cout,
                        px,
                        ckk,
                        T::one(),
                        gb,
                        (px as isize, 1),
                        &col,
                        (1, px as isize),
                        T::one(),
                        dk,
                        (ckk as isize, 1),
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    // dcol = K^T * dOut_b
                    T::gemm(
                        ckk,
                        cout,
                        px,
                        T::one(),
                        k.data(),
                        (1, ckk as isize),
                        gb,
                        (px as isize, 1),
                        T::zero(),
                        &mut dcol,
                        (px as isize, 1),
                    );
                    col2im_add(&dcol, &d, &mut dx[b * in_stride..(b + 1) * in_stride]);
                }
            }
            vec![dx, dk]
        }),
    )?;
    Ok((t, d))
}

/// 2-D cross-correlation of `[batch, cin, h, w]` with `[cout, cin, kh, kw]`.
///
/// Output extent per axis is `(len + 2 * padding - k) / stride + 1`, which
/// must be integral.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let geo = Conv2dGeometry {
        stride: (stride, stride),
        padding: (padding, padding),
    };
    conv2d_general(input, kernel, geo).map(|(t, _)| t)
}

/// 1-D cross-correlation of `[batch, cin, len]` with `[cout, cin, k]`.
pub fn conv1d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [n, cin, len] = *input.shape() else {
        return Err(Error::Dimension(format!(
            "conv1d: input must be [batch, channels, len], got {:?}",
            input.shape()
        )));
    };
    let [cout, kcin, k] = *kernel.shape() else {
        return Err(Error::Dimension(format!(
            "conv1d: kernel must be [cout, cin, k], got {:?}",
            kernel.shape()
        )));
    };
    let x4 = input.reshape(&[n, cin, 1, len])?;
    let k4 = kernel.reshape(&[cout, kcin, 1, k])?;
    let geo = Conv2dGeometry {
        stride: (1, stride),
        padding: (0, padding),
    };
    let (y, d) = conv2d_general(&x4, &k4, geo)?;
    y.reshape(&[n, cout, d.wo])
}
