use crate::error::{dim_err, Result, TensorError};
use crate::gemm::{gemm, MatRef};
use crate::tape::{expect_rank, Tape, Var};
use crate::tensor::Tensor;

/// `floor((dim + 2·pad − k) / stride) + 1`, or `None` when the kernel does
/// not fit inside the padded input.
pub fn conv_output_dim(dim: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = dim + 2 * pad;
    if k == 0 || stride == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Iterate `(col_row, col_col, input_index)` for every in-bounds tap.
    fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let n = self.cols();
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &x[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], dx: &mut [f32]) {
        let n = self.cols();
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut dx[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    /// 2-D cross-correlation of `x[b×c×h×w]` with `kernel[o×c×kh×kw]`, no bias.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (vx, vk) = (self.value(x), self.value(kernel));
        expect_rank(vx, 4, "conv2d input")?;
        expect_rank(vk, 4, "conv2d kernel")?;
        let [b, c, h, w] = vx.shape()[..] else { unreachable!() };
        let [o, kc, kh, kw] = vk.shape()[..] else { unreachable!() };
        if kc != c {
            return dim_err(format!(
                "conv2d: kernel {:?} expects {kc} channels, input has {c}",
                vk.shape()
            ));
        }
        let (Some(oh), Some(ow)) = (
            conv_output_dim(h, kh, stride, pad),
            conv_output_dim(w, kw, stride, pad),
        ) else {
            return Err(TensorError::Dimension(format!(
                "conv2d: kernel {kh}×{kw} (stride {stride}) larger than padded input {}×{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        };
        let geom = ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        };
        let (rows, ncols) = (geom.rows(), geom.cols());
        let mut cols = vec![0.0; rows * ncols];
        let mut out = vec![0.0; b * o * ncols];
        let in_stride = c * h * w;
        for s in 0..b {
            geom.im2col(&vx.data()[s * in_stride..(s + 1) * in_stride], &mut cols);
            gemm(
                MatRef::new(vk.data(), o, rows),
                MatRef::new(&cols, rows, ncols),
                &mut out[s * o * ncols..(s + 1) * o * ncols],
                0.0,
            );
        }
        let out = Tensor::new(vec![b, o, oh, ow], out)?;
        Ok(self.push_op(
            out,
            &[x, kernel],
            Box::new(move |g, vals, sink| {
                let xs = vals.get(x).data();
                let ks = vals.get(kernel).data();
                let want_x = sink.wants(x);
                let mut cols = vec![0.0; rows * ncols];
                let mut dcols = if want_x { vec![0.0; rows * ncols] } else { Vec::new() };
                for s in 0..b {
                    let gs = MatRef::new(&g.data()[s * o * ncols..(s + 1) * o * ncols], o, ncols);
                    if let Some(dk) = sink.slot(kernel) {
                        geom.im2col(&xs[s * in_stride..(s + 1) * in_stride], &mut cols);
                        gemm(gs, MatRef::new(&cols, rows, ncols).t(), dk, 1.0);
                    }
                    if want_x {
                        gemm(MatRef::new(ks, o, rows).t(), gs, &mut dcols, 0.0);
                        if let Some(dx) = sink.slot(x) {
                            geom.col2im(&dcols, &mut dx[s * in_stride..(s + 1) * in_stride]);
                        }
                    }
                }
            }),
        ))
    }

    /// Adaptive average pooling of `x[b×c×h×w]` to `out_h × out_w`, using the
    /// bins `[floor(i·h/oh), ceil((i+1)·h/oh))`.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let vx = self.value(x);
        expect_rank(vx, 4, "adaptive_avg_pool2d")?;
        let [b, c, h, w] = vx.shape()[..] else { unreachable!() };
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return dim_err("adaptive_avg_pool2d: zero-sized input or output");
        }
        let bins = |i: usize, len: usize, out: usize| (i * len / out, ((i + 1) * len).div_ceil(out));
        let mut out = vec![0.0; b * c * out_h * out_w];
        for plane in 0..b * c {
            let src = &vx.data()[plane * h * w..(plane + 1) * h * w];
            for i in 0..out_h {
                let (y0, y1) = bins(i, h, out_h);
                for j in 0..out_w {
                    let (x0, x1) = bins(j, w, out_w);
                    let mut acc = 0.0f64;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            acc += src[yy * w + xx] as f64;
                        }
                    }
                    out[(plane * out_h + i) * out_w + j] = (acc / ((y1 - y0) * (x1 - x0)) as f64) as f32;
                }
            }
        }
        let out = Tensor::new(vec![b, c, out_h, out_w], out)?;
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |g, _, sink| {
                let Some(dx) = sink.slot(x) else { return };
                for plane in 0..b * c {
                    let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for i in 0..out_h {
                        let (y0, y1) = bins(i, h, out_h);
                        for j in 0..out_w {
                            let (x0, x1) = bins(j, w, out_w);
                            let gv = g.data()[(plane * out_h + i) * out_w + j]
                                / ((y1 - y0) * (x1 - x0)) as f32;
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    dst[yy * w + xx] += gv;
                                }
                            }
                        }
                    }
                }
            }),
        ))
    }
}
