use crate::conv::out_extent;
use crate::error::{invalid, shape_err, Result};

/// Square pooling window. Padded positions never contribute: max pooling
/// ignores them and average pooling divides by the number of real inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub nc: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
    pub spec: PoolSpec,
}

impl PoolGeom {
    pub fn new(op: &'static str, x: &[usize], spec: PoolSpec) -> Result<Self> {
        let (n, c, h, w) = match *x {
            [n, c, h, w] => (n, c, h, w),
            _ => return shape_err(op, format!("input must be NCHW, got {x:?}")),
        };
        if spec.kernel == 0 || spec.stride == 0 {
            return invalid(op, format!("kernel and stride must be positive: {spec:?}"));
        }
        if spec.padding >= spec.kernel {
            return invalid(op, format!("padding {} must be smaller than the kernel", spec.padding));
        }
        let ho = out_extent(h, spec.kernel, spec.stride, spec.padding, 1);
        let wo = out_extent(w, spec.kernel, spec.stride, spec.padding, 1);
        match (ho, wo) {
            (Some(ho), Some(wo)) => Ok(Self {
                nc: n * c,
                h,
                w,
                ho,
                wo,
                spec,
            }),
            _ => shape_err(
                op,
                format!("window {} does not fit input {h}x{w} with padding {}", spec.kernel, spec.padding),
            ),
        }
    }

    fn range(&self, o: usize, size: usize) -> (usize, usize) {
        let start = (o * self.spec.stride) as isize - self.spec.padding as isize;
        let end = (start + self.spec.kernel as isize).min(size as isize);
        (start.max(0) as usize, end.max(0) as usize)
    }

    pub fn out_len(&self) -> usize {
        self.nc * self.ho * self.wo
    }
}

/// Returns outputs and, per output, the flat input index that won (first in scan order on ties).
pub(crate) fn max_forward(g: &PoolGeom, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.out_len());
    let mut arg = Vec::with_capacity(g.out_len());
    for p in 0..g.nc {
        let base = p * g.h * g.w;
        for oy in 0..g.ho {
            let (y0, y1) = g.range(oy, g.h);
            for ox in 0..g.wo {
                let (x0, x1) = g.range(ox, g.w);
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let i = base + iy * g.w + ix;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_backward(arg: &[usize], gy: &[f64], in_len: usize) -> Vec<f64> {
    let mut gx = vec![0.0; in_len];
    for (&i, &g) in arg.iter().zip(gy) {
        if i != usize::MAX {
            gx[i] += g;
        }
    }
    gx
}

pub(crate) fn avg_forward(g: &PoolGeom, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.out_len());
    for p in 0..g.nc {
        let base = p * g.h * g.w;
        for oy in 0..g.ho {
            let (y0, y1) = g.range(oy, g.h);
            for ox in 0..g.wo {
                let (x0, x1) = g.range(ox, g.w);
                let mut acc = 0.0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        acc += x[base + iy * g.w + ix];
                    }
                }
                let count = ((y1 - y0) * (x1 - x0)).max(1);
                out.push(acc / count as f64);
            }
        }
    }
    out
}

pub(crate) fn avg_backward(g: &PoolGeom, gy: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; g.nc * g.h * g.w];
    let mut k = 0;
    for p in 0..g.nc {
        let base = p * g.h * g.w;
        for oy in 0..g.ho {
            let (y0, y1) = g.range(oy, g.h);
            for ox in 0..g.wo {
                let (x0, x1) = g.range(ox, g.w);
                let count = ((y1 - y0) * (x1 - x0)).max(1);
                let share = gy[k] / count as f64;
                k += 1;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        gx[base + iy * g.w + ix] += share;
                    }
                }
            }
        }
    }
    gx
}
