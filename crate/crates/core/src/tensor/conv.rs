//! Convolution kernels: im2col lowering onto a single GEMM per batch item.

use crate::error::{Error, Result};

use super::{Element, Tensor};

/// Geometry of a strided, zero-padded 2-D correlation over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        op: &'static str,
        [channels, height, width]: [usize; 3],
        [kh, kw]: [usize; 2],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid(op, "stride must be positive"));
        }
        if kh > height + 2 * pad || kw > width + 2 * pad {
            return Err(Error::invalid(
                op,
                format!("kernel {kh}x{kw} larger than padded input {height}x{width} (+2*{pad})"),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            pad,
            out_h: (height + 2 * pad - kh) / stride + 1,
            out_w: (width + 2 * pad - kw) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output positions `lo..hi` whose tap `k` lands inside `0..extent`.
    #[inline]
    fn valid(k: usize, stride: usize, pad: usize, extent: usize, out: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(k).div_ceil(stride).min(out);
        let hi = if extent + pad > k {
            ((extent - 1 + pad - k) / stride + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Writes the patches of one image into columns `off..off + out_h·out_w`
    /// of a column matrix with row length `ld`.
    pub fn im2col<T: Element>(&self, image: &[T], cols: &mut [T], ld: usize, off: usize) {
        let ncols = self.col_cols();
        let (s, p) = (self.stride, self.pad);
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kh {
                let (ylo, yhi) = Self::valid(ki, s, p, self.height, self.out_h);
                for kj in 0..self.kw {
                    let (xlo, xhi) = Self::valid(kj, s, p, self.width, self.out_w);
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * ld + off..row * ld + off + ncols];
                    for oh in 0..self.out_h {
                        let line = &mut dst[oh * self.out_w..(oh + 1) * self.out_w];
                        if oh < ylo || oh >= yhi {
                            line.fill(T::zero());
                            continue;
                        }
                        let ih = oh * s + ki - p;
                        let src_row = &plane[ih * self.width..(ih + 1) * self.width];
                        line[..xlo].fill(T::zero());
                        line[xhi..].fill(T::zero());
                        if xlo == xhi {
                            continue;
                        }
                        let first = xlo * s + kj - p;
                        if s == 1 {
                            line[xlo..xhi].copy_from_slice(&src_row[first..first + xhi - xlo]);
                        } else {
                            for (v, &x) in line[xlo..xhi].iter_mut().zip(src_row[first..].iter().step_by(s)) {
                                *v = x;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds columns back onto the image; the adjoint of [`im2col`](Self::im2col).
    pub fn col2im<T: Element>(&self, cols: &[T], image: &mut [T], ld: usize, off: usize) {
        let ncols = self.col_cols();
        let (s, p) = (self.stride, self.pad);
        for c in 0..self.channels {
            let plane = &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kh {
                let (ylo, yhi) = Self::valid(ki, s, p, self.height, self.out_h);
                for kj in 0..self.kw {
                    let (xlo, xhi) = Self::valid(kj, s, p, self.width, self.out_w);
                    if xlo == xhi {
                        continue;
                    }
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * ld + off..row * ld + off + ncols];
                    for oh in ylo..yhi {
                        let ih = oh * s + ki - p;
                        let line = &src[oh * self.out_w + xlo..oh * self.out_w + xhi];
                        let dst_row = &mut plane[ih * self.width..(ih + 1) * self.width];
                        let first = xlo * s + kj - p;
                        for (d, &v) in dst_row[first..].iter_mut().step_by(s).zip(line) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Element>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn bias_grad<T: Element>(dy: &[T], channels: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for (i, chunk) in dy.chunks(plane).enumerate() {
        let c = i % channels;
        db[c] = chunk.iter().fold(db[c], |a, &v| a + v);
    }
    db
}

fn check_bias<T: Element>(op: &'static str, bias: Option<&Tensor<T>>, out_ch: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [out_ch] {
            return Err(Error::ShapeMismatch {
                op,
                lhs: vec![out_ch],
                rhs: b.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Geometry of `conv2d(input, weight)` with weight `[F, C, kh, kw]`.
pub(crate) fn conv2d_geom<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, ConvGeom)> {
    let [n, c, h, w] = input.dims4("conv2d")?;
    let [f, wc, kh, kw] = weight.dims4("conv2d")?;
    if wc != c {
        return Err(Error::ShapeMismatch {
            op: "conv2d (input channels vs weight channels)",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    Ok((n, f, ConvGeom::new("conv2d", [c, h, w], [kh, kw], stride, pad)?))
}

/// `[N, C, P]` → `[C, N·P]`.
fn channel_major<T: Element>(data: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for i in 0..n {
        for ch in 0..c {
            out[(ch * n + i) * p..(ch * n + i + 1) * p].copy_from_slice(&data[(i * c + ch) * p..(i * c + ch + 1) * p]);
        }
    }
    out
}

/// `[C, N·P]` → `[N, C, P]`.
fn batch_major<T: Element>(data: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for i in 0..n {
        for ch in 0..c {
            out[(i * c + ch) * p..(i * c + ch + 1) * p].copy_from_slice(&data[(ch * n + i) * p..(ch * n + i + 1) * p]);
        }
    }
    out
}

/// Patches of the whole batch as one `[C·kh·kw, N·P]` matrix.
fn batch_im2col<T: Element>(g: &ConvGeom, data: &[T], n: usize) -> Vec<T> {
    let ncols = g.col_cols();
    let item = g.channels * g.height * g.width;
    let ld = n * ncols;
    let mut cols = vec![T::zero(); g.col_rows() * ld];
    for i in 0..n {
        g.im2col(&data[i * item..(i + 1) * item], &mut cols, ld, i * ncols);
    }
    cols
}

fn batch_col2im<T: Element>(g: &ConvGeom, cols: &[T], n: usize) -> Vec<T> {
    let ncols = g.col_cols();
    let item = g.channels * g.height * g.width;
    let mut out = vec![T::zero(); n * item];
    for i in 0..n {
        g.col2im(cols, &mut out[i * item..(i + 1) * item], n * ncols, i * ncols);
    }
    out
}

pub(crate) fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, f, g) = conv2d_geom(input, weight, stride, pad)?;
    check_bias("conv2d", bias, f)?;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let ld = n * ncols;
    let cols = batch_im2col(&g, input.data(), n);
    let mut y = vec![T::zero(); f * ld];
    T::gemm(
        f,
        rows,
        ld,
        weight.data(),
        (rows as isize, 1),
        &cols,
        (ld as isize, 1),
        T::zero(),
        &mut y,
    );
    let mut out = batch_major(&y, n, f, ncols);
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), ncols);
    }
    Tensor::new(vec![n, f, g.out_h, g.out_w], out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    dy: &[T],
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let (n, f, g) = conv2d_geom(input, weight, stride, pad)?;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let ld = n * ncols;
    let dy_cm = channel_major(dy, n, f, ncols);
    let dw = need[1].then(|| {
        let cols = batch_im2col(&g, input.data(), n);
        let mut dw = vec![T::zero(); weight.numel()];
        // dW = dY · colsᵀ
        T::gemm(
            f,
            ld,
            rows,
            &dy_cm,
            (ld as isize, 1),
            &cols,
            (1, ld as isize),
            T::zero(),
            &mut dw,
        );
        dw
    });
    let dx = need[0].then(|| {
        // dcols = Wᵀ · dY
        let mut dcols = vec![T::zero(); rows * ld];
        T::gemm(
            rows,
            f,
            ld,
            weight.data(),
            (1, rows as isize),
            &dy_cm,
            (ld as isize, 1),
            T::zero(),
            &mut dcols,
        );
        batch_col2im(&g, &dcols, n)
    });
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: need[2].then(|| bias_grad(dy, f, ncols)),
    })
}

/// Geometry for `conv_transpose2d` with weight `[C_in, C_out, kh, kw]`.
///
/// Returned geometry describes the *forward conv* that maps the transpose
/// output (`C_out × H' × W'`) back to the input extent.
pub(crate) fn conv_transpose2d_geom<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, ConvGeom)> {
    let op = "conv_transpose2d";
    let [n, c, h, w] = input.dims4(op)?;
    let [wc, f, kh, kw] = weight.dims4(op)?;
    if wc != c {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d (input channels vs weight channels)",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be positive"));
    }
    let out_h = ((h - 1) * stride + kh) as isize - 2 * pad as isize;
    let out_w = ((w - 1) * stride + kw) as isize - 2 * pad as isize;
    if out_h < 1 || out_w < 1 {
        return Err(Error::invalid(
            op,
            format!("output extent {out_h}x{out_w} is empty for input {h}x{w}"),
        ));
    }
    let g = ConvGeom::new(op, [f, out_h as usize, out_w as usize], [kh, kw], stride, pad)?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    Ok((n, c, g))
}

pub(crate) fn conv_transpose2d_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, c, g) = conv_transpose2d_geom(input, weight, stride, pad)?;
    check_bias("conv_transpose2d", bias, g.channels)?;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let ld = n * ncols;
    let x_cm = channel_major(input.data(), n, c, ncols);
    // cols = Wᵀ · x, W viewed as [C_in, C_out·kh·kw]
    let mut cols = vec![T::zero(); rows * ld];
    T::gemm(
        rows,
        c,
        ld,
        weight.data(),
        (1, rows as isize),
        &x_cm,
        (ld as isize, 1),
        T::zero(),
        &mut cols,
    );
    let mut out = batch_col2im(&g, &cols, n);
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), g.height * g.width);
    }
    Tensor::new(vec![n, g.channels, g.height, g.width], out)
}

pub(crate) fn conv_transpose2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    dy: &[T],
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let (n, c, g) = conv_transpose2d_geom(input, weight, stride, pad)?;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let ld = n * ncols;
    let (mut dx, mut dw) = (None, None);
    if need[0] || need[1] {
        let cols = batch_im2col(&g, dy, n);
        if need[0] {
            // dx = W · dcols
            let mut dx_cm = vec![T::zero(); c * ld];
            T::gemm(
                c,
                rows,
                ld,
                weight.data(),
                (rows as isize, 1),
                &cols,
                (ld as isize, 1),
                T::zero(),
                &mut dx_cm,
            );
            dx = Some(batch_major(&dx_cm, n, c, ncols));
        }
        if need[1] {
            // dW = x · dcolsᵀ
            let x_cm = channel_major(input.data(), n, c, ncols);
            let mut w = vec![T::zero(); weight.numel()];
            T::gemm(
                c,
                ld,
                rows,
                &x_cm,
                (ld as isize, 1),
                &cols,
                (1, ld as isize),
                T::zero(),
                &mut w,
            );
            dw = Some(w);
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: need[2].then(|| bias_grad(dy, g.channels, g.height * g.width)),
    })
}
