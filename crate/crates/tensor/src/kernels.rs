//! Tape-independent numeric kernels.
//!
//! The differentiable ops in [`crate::tape`] are thin wrappers around these;
//! callers that need no gradients (evaluation, adversarial-training data
//! preparation) use them directly on plain slices.

use crate::error::{shape_err, Result, TensorError};
use crate::scalar::Scalar;

/// Geometry of a 2-D convolution over one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cin: usize,
        h: usize,
        w: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(shape_err("conv2d", "stride must be >= 1"));
        }
        if kh == 0 || kw == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(shape_err(
                "conv2d",
                format!("kernel {kh}x{kw} does not fit input {h}x{w} with padding {pad}"),
            ));
        }
        Ok(Self {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Rows of the unfolded patch matrix.
    pub fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// Output positions per channel.
    pub fn p(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one image `[cin, h, w]` into `col` of shape `[k, p]`.
pub fn im2col<T: Scalar>(g: &ConvGeom, img: &[T], col: &mut [T]) {
    let p = g.p();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &img[(ci * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `img`.
pub fn col2im_add<T: Scalar>(g: &ConvGeom, col: &[T], img: &mut [T]) {
    let p = g.p();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut img[(ci * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution of a batch. Returns the output and the unfolded
/// inputs (kept for the backward pass).
pub fn conv2d_forward<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    kernel: &[T],
) -> (Vec<T>, Vec<T>) {
    let (k, p) = (g.k(), g.p());
    let in_stride = g.cin * g.h * g.w;
    let mut cols = vec![T::zero(); batch * k * p];
    let mut out = vec![T::zero(); batch * g.cout * p];
    for b in 0..batch {
        let col = &mut cols[b * k * p..(b + 1) * k * p];
        im2col(g, &input[b * in_stride..(b + 1) * in_stride], col);
        T::gemm(
            g.cout,
            k,
            p,
            T::one(),
            kernel,
            k as isize,
            1,
            col,
            p as isize,
            1,
            T::zero(),
            &mut out[b * g.cout * p..(b + 1) * g.cout * p],
            p as isize,
            1,
        );
    }
    (out, cols)
}

/// Kernel gradient contribution: `dkernel += Σ_b dout_b · col_bᵀ`.
pub fn conv2d_kernel_grad<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    dout: &[T],
    cols: &[T],
    dkernel: &mut [T],
) {
    let (k, p) = (g.k(), g.p());
    for b in 0..batch {
        T::gemm(
            g.cout,
            p,
            k,
            T::one(),
            &dout[b * g.cout * p..(b + 1) * g.cout * p],
            p as isize,
            1,
            &cols[b * k * p..(b + 1) * k * p],
            1,
            p as isize,
            T::one(),
            dkernel,
            k as isize,
            1,
        );
    }
}

/// Input gradient contribution: `dinput += col2im(kernelᵀ · dout)`.
pub fn conv2d_input_grad<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    dout: &[T],
    kernel: &[T],
    dinput: &mut [T],
) {
    let (k, p) = (g.k(), g.p());
    let in_stride = g.cin * g.h * g.w;
    let mut dcol = vec![T::zero(); k * p];
    for b in 0..batch {
        T::gemm(
            k,
            g.cout,
            p,
            T::one(),
            kernel,
            1,
            k as isize,
            &dout[b * g.cout * p..(b + 1) * g.cout * p],
            p as isize,
            1,
            T::zero(),
            &mut dcol,
            p as isize,
            1,
        );
        col2im_add(g, &dcol, &mut dinput[b * in_stride..(b + 1) * in_stride]);
    }
}

/// Projective map in pixel-index coordinates (`x` = column, `y` = row).
pub type Homography = [[f64; 3]; 3];

pub const IDENTITY: Homography = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn det3(m: &Homography) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn invert3(m: &Homography) -> Result<Homography> {
    let det = det3(m);
    if !det.is_finite() || det.abs() <= 1e-9 {
        return Err(TensorError::SingularHomography { det });
    }
    let inv = 1.0 / det;
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    Ok([
        [c(1, 1, 2, 2) * inv, -c(0, 1, 2, 2) * inv, c(0, 1, 1, 2) * inv],
        [-c(1, 0, 2, 2) * inv, c(0, 0, 2, 2) * inv, -c(0, 0, 1, 2) * inv],
        [c(1, 0, 2, 1) * inv, -c(0, 0, 2, 1) * inv, c(0, 0, 1, 1) * inv],
    ])
}

pub fn compose3(a: &Homography, b: &Homography) -> Homography {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn apply3(m: &Homography, x: f64, y: f64) -> Option<(f64, f64)> {
    let w = m[2][0] * x + m[2][1] * y + m[2][2];
    if w.abs() < 1e-12 {
        return None;
    }
    Some((
        (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
        (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
    ))
}

/// Precomputed bilinear sampling taps for one output raster.
///
/// Output pixel `(i, j)` is inverse-mapped through the homography. Points
/// inside the source footprint `[-0.5, w-0.5] × [-0.5, h-0.5]` are sampled
/// with coordinates clamped to the pixel-centre grid; points outside get no
/// taps, a zero value and a zero mask entry.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpPlan<T> {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    taps: Vec<Option<([usize; 4], [T; 4])>>,
}

impl<T: Scalar> WarpPlan<T> {
    pub fn new(homography: &Homography, in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Result<Self> {
        if in_h == 0 || in_w == 0 {
            return Err(shape_err("bilinear_warp", "empty source image"));
        }
        let inv = invert3(homography)?;
        let mut taps = Vec::with_capacity(out_h * out_w);
        for i in 0..out_h {
            for j in 0..out_w {
                let tap = apply3(&inv, j as f64, i as f64).and_then(|(x, y)| {
                    let inside = x >= -0.5 && x <= in_w as f64 - 0.5 && y >= -0.5 && y <= in_h as f64 - 0.5;
                    inside.then(|| Self::tap(x, y, in_h, in_w))
                });
                taps.push(tap);
            }
        }
        Ok(Self {
            in_h,
            in_w,
            out_h,
            out_w,
            taps,
        })
    }

    fn tap(x: f64, y: f64, h: usize, w: usize) -> ([usize; 4], [T; 4]) {
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let x0 = (x.floor() as usize).min(w.saturating_sub(2));
        let y0 = (y.floor() as usize).min(h.saturating_sub(2));
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        (
            [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
            [
                T::of((1.0 - fx) * (1.0 - fy)),
                T::of(fx * (1.0 - fy)),
                T::of((1.0 - fx) * fy),
                T::of(fx * fy),
            ],
        )
    }

    /// Warps `channels` planes of `src` (`[c, in_h, in_w]`).
    pub fn apply(&self, src: &[T], channels: usize) -> Vec<T> {
        let (ip, op) = (self.in_h * self.in_w, self.out_h * self.out_w);
        let mut out = vec![T::zero(); channels * op];
        for c in 0..channels {
            let plane = &src[c * ip..(c + 1) * ip];
            for (o, tap) in out[c * op..(c + 1) * op].iter_mut().zip(&self.taps) {
                if let Some((idx, w)) = tap {
                    *o = w[0] * plane[idx[0]] + w[1] * plane[idx[1]] + w[2] * plane[idx[2]] + w[3] * plane[idx[3]];
                }
            }
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply), accumulated into `dsrc`.
    pub fn apply_adjoint(&self, dout: &[T], channels: usize, dsrc: &mut [T]) {
        let (ip, op) = (self.in_h * self.in_w, self.out_h * self.out_w);
        for c in 0..channels {
            let plane = &mut dsrc[c * ip..(c + 1) * ip];
            for (&g, tap) in dout[c * op..(c + 1) * op].iter().zip(&self.taps) {
                if let Some((idx, w)) = tap {
                    for k in 0..4 {
                        plane[idx[k]] += w[k] * g;
                    }
                }
            }
        }
    }

    /// 1 where the output pixel samples inside the source, 0 elsewhere.
    pub fn mask(&self) -> Vec<T> {
        self.taps
            .iter()
            .map(|t| if t.is_some() { T::one() } else { T::zero() })
            .collect()
    }
}

/// Number of horizontally and vertically adjacent pixel pairs.
pub fn tv_pairs(c: usize, h: usize, w: usize) -> usize {
    c * (h * w.saturating_sub(1) + h.saturating_sub(1) * w)
}

/// Mean absolute difference over all adjacent pixel pairs.
pub fn total_variation<T: Scalar>(img: &[T], c: usize, h: usize, w: usize) -> T {
    let pairs = tv_pairs(c, h, w);
    if pairs == 0 {
        return T::zero();
    }
    let mut acc = T::zero();
    for ch in 0..c {
        let p = &img[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let v = p[y * w + x];
                if x + 1 < w {
                    acc += (p[y * w + x + 1] - v).abs();
                }
                if y + 1 < h {
                    acc += (p[(y + 1) * w + x] - v).abs();
                }
            }
        }
    }
    acc / T::of(pairs as f64)
}

/// Subgradient of [`total_variation`] scaled by `g`, accumulated into `dimg`.
pub fn total_variation_grad<T: Scalar>(img: &[T], c: usize, h: usize, w: usize, g: T, dimg: &mut [T]) {
    let pairs = tv_pairs(c, h, w);
    if pairs == 0 {
        return;
    }
    let s = g / T::of(pairs as f64);
    let sign = |d: T| {
        if d > T::zero() {
            T::one()
        } else if d < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    };
    for ch in 0..c {
        let off = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                let i = off + y * w + x;
                if x + 1 < w {
                    let d = sign(img[i + 1] - img[i]) * s;
                    dimg[i + 1] += d;
                    dimg[i] -= d;
                }
                if y + 1 < h {
                    let d = sign(img[i + w] - img[i]) * s;
                    dimg[i + w] += d;
                    dimg[i] -= d;
                }
            }
        }
    }
}

/// Placement of a `[c, ph, pw]` patch inside a `[c, h, w]` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PasteGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub ph: usize,
    pub pw: usize,
    pub y0: isize,
    pub x0: isize,
}

impl PasteGeom {
    /// Visits every patch pixel that lands inside the image as
    /// `(image offset within a plane, patch offset within a plane)`.
    fn for_each_overlap(&self, mut f: impl FnMut(usize, usize)) {
        for py in 0..self.ph {
            let y = self.y0 + py as isize;
            if y < 0 || y >= self.h as isize {
                continue;
            }
            for px in 0..self.pw {
                let x = self.x0 + px as isize;
                if x < 0 || x >= self.w as isize {
                    continue;
                }
                f(y as usize * self.w + x as usize, py * self.pw + px);
            }
        }
    }
}

/// `image · (1 − mask) + patch · mask` inside the placement, clipped to the image.
pub fn paste<T: Scalar>(g: &PasteGeom, image: &[T], patch: &[T], mask: &[T]) -> Vec<T> {
    let mut out = image.to_vec();
    let (ip, pp) = (g.h * g.w, g.ph * g.pw);
    g.for_each_overlap(|io, po| {
        let m = mask[po];
        for c in 0..g.c {
            let o = &mut out[c * ip + io];
            *o = *o * (T::one() - m) + patch[c * pp + po] * m;
        }
    });
    out
}

/// Gradients of [`paste`] into the image and the patch.
pub fn paste_grad<T: Scalar>(
    g: &PasteGeom,
    mask: &[T],
    dout: &[T],
    dimage: Option<&mut [T]>,
    dpatch: Option<&mut [T]>,
) {
    let (ip, pp) = (g.h * g.w, g.ph * g.pw);
    if let Some(di) = dimage {
        for (d, &o) in di.iter_mut().zip(dout) {
            *d += o;
        }
        g.for_each_overlap(|io, po| {
            for c in 0..g.c {
                di[c * ip + io] -= dout[c * ip + io] * mask[po];
            }
        });
    }
    if let Some(dp) = dpatch {
        g.for_each_overlap(|io, po| {
            for c in 0..g.c {
                dp[c * pp + po] += dout[c * ip + io] * mask[po];
            }
        });
    }
}

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
