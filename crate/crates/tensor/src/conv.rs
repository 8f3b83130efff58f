//! 2-D convolution kernels (NCHW input, OIHW weights).
//!
//! Grouped convolutions go through im2col + GEMM per (sample, group).
//! Depthwise convolutions (one input and one output channel per group)
//! use direct loops instead, since their GEMMs would be 1×k² row vectors.

use crate::error::{invalid, shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, dilation: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
            groups,
        }
    }
}

/// Output extent along one axis, or `None` if the dilated kernel does not fit.
pub(crate) fn out_extent(size: usize, kernel: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
    let eff = dil * (kernel - 1) + 1;
    if size + 2 * pad < eff {
        return None;
    }
    Some((size + 2 * pad - eff) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub spec: ConvSpec,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], spec: ConvSpec) -> Result<Self> {
        const OP: &str = "conv2d";
        let (n, c_in, h, wd) = match *x {
            [n, c, h, w] => (n, c, h, w),
            _ => return shape_err(OP, format!("input must be NCHW, got {x:?}")),
        };
        let (c_out, cin_g, kh, kw) = match *w {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => return shape_err(OP, format!("weight must be OIHW, got {w:?}")),
        };
        if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
            return invalid(OP, format!("stride, dilation and groups must be positive: {spec:?}"));
        }
        if c_in % spec.groups != 0 || c_out % spec.groups != 0 {
            return shape_err(
                OP,
                format!("groups={} must divide c_in={c_in} and c_out={c_out}", spec.groups),
            );
        }
        if cin_g != c_in / spec.groups {
            return shape_err(
                OP,
                format!(
                    "weight expects {cin_g} input channels per group, input has {c_in} channels in {} groups",
                    spec.groups
                ),
            );
        }
        let ho = out_extent(h, kh, spec.stride, spec.padding, spec.dilation);
        let wo = out_extent(wd, kw, spec.stride, spec.padding, spec.dilation);
        let (ho, wo) = match (ho, wo) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return shape_err(
                    OP,
                    format!("kernel {kh}x{kw} (dilation {}) does not fit input {h}x{wd} with padding {}", spec.dilation, spec.padding),
                )
            }
        };
        Ok(Self {
            n,
            c_in,
            h,
            w: wd,
            c_out,
            kh,
            kw,
            ho,
            wo,
            spec,
        })
    }

    pub fn cin_g(&self) -> usize {
        self.c_in / self.spec.groups
    }

    pub fn cout_g(&self) -> usize {
        self.c_out / self.spec.groups
    }

    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.c_out, self.ho, self.wo]
    }

    /// Multiply-accumulate count of the forward pass (bias excluded).
    pub fn macs(&self) -> u64 {
        (self.kh * self.kw * self.cin_g() * self.ho * self.wo * self.c_out * self.n) as u64
    }

    #[inline]
    fn in_coord(&self, o: usize, k: usize) -> Option<usize> {
        let pos = (o * self.spec.stride + k * self.spec.dilation) as isize - self.spec.padding as isize;
        (pos >= 0).then_some(pos as usize)
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(m == 0 || n == 0 || c.len() > (m - 1) * rsc + (n - 1));
    // SAFETY: the slices cover every index the strided views touch (checked above).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// `c[m×n] (+)= a[m×k] · b[k×n]`, all row-major and contiguous.
pub(crate) fn matmul_into(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    gemm(m, k, n, a, k, 1, b, n, 1, if accumulate { 1.0 } else { 0.0 }, c, n);
}

/// `c[m×n] (+)= aᵀ · b` with `a` stored `k×m`.
pub(crate) fn matmul_at_b(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    gemm(m, k, n, a, 1, m, b, n, 1, if accumulate { 1.0 } else { 0.0 }, c, n);
}

/// `c[m×n] (+)= a · bᵀ` with `b` stored `n×k`.
pub(crate) fn matmul_a_bt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    gemm(m, k, n, a, k, 1, b, 1, k, if accumulate { 1.0 } else { 0.0 }, c, n);
}

fn im2col(g: &ConvGeom, x_group: &[f64], col: &mut [f64]) {
    let hw_out = g.ho * g.wo;
    for c in 0..g.cin_g() {
        let plane = &x_group[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    match g.in_coord(oy, ky).filter(|&iy| iy < g.h) {
                        None => line.fill(0.0),
                        Some(iy) => {
                            let src = &plane[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.in_coord(ox, kx).filter(|&ix| ix < g.w) {
                                    Some(ix) => src[ix],
                                    None => 0.0,
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, col: &[f64], gx_group: &mut [f64]) {
    let hw_out = g.ho * g.wo;
    for c in 0..g.cin_g() {
        let plane = &mut gx_group[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let Some(iy) = g.in_coord(oy, ky).filter(|&iy| iy < g.h) else {
                        continue;
                    };
                    for ox in 0..g.wo {
                        if let Some(ix) = g.in_coord(ox, kx).filter(|&ix| ix < g.w) {
                            plane[iy * g.w + ix] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward(g: &ConvGeom, x: &[f64], w: &[f64], out: &mut [f64]) {
    let (hw_in, hw_out, kk) = (g.h * g.w, g.ho * g.wo, g.kh * g.kw);
    for n in 0..g.n {
        for c in 0..g.c_in {
            let plane = &x[(n * g.c_in + c) * hw_in..][..hw_in];
            let dst = &mut out[(n * g.c_out + c) * hw_out..][..hw_out];
            let wk = &w[c * kk..(c + 1) * kk];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = 0.0;
                    for ky in 0..g.kh {
                        let Some(iy) = g.in_coord(oy, ky).filter(|&iy| iy < g.h) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            if let Some(ix) = g.in_coord(ox, kx).filter(|&ix| ix < g.w) {
                                acc += wk[ky * g.kw + kx] * plane[iy * g.w + ix];
                            }
                        }
                    }
                    dst[oy * g.wo + ox] = acc;
                }
            }
        }
    }
}

fn depthwise_backward(g: &ConvGeom, x: &[f64], w: &[f64], gy: &[f64], gx: &mut [f64], gw: &mut [f64]) {
    let (hw_in, hw_out, kk) = (g.h * g.w, g.ho * g.wo, g.kh * g.kw);
    for n in 0..g.n {
        for c in 0..g.c_in {
            let plane = &x[(n * g.c_in + c) * hw_in..][..hw_in];
            let gplane = &mut gx[(n * g.c_in + c) * hw_in..][..hw_in];
            let gsrc = &gy[(n * g.c_out + c) * hw_out..][..hw_out];
            let wk = &w[c * kk..(c + 1) * kk];
            let gwk = &mut gw[c * kk..(c + 1) * kk];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let go = gsrc[oy * g.wo + ox];
                    for ky in 0..g.kh {
                        let Some(iy) = g.in_coord(oy, ky).filter(|&iy| iy < g.h) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            if let Some(ix) = g.in_coord(ox, kx).filter(|&ix| ix < g.w) {
                                gwk[ky * g.kw + kx] += go * plane[iy * g.w + ix];
                                gplane[iy * g.w + ix] += go * wk[ky * g.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let hw_in = g.h * g.w;
    let hw_out = g.ho * g.wo;
    let mut out = vec![0.0; g.n * g.c_out * hw_out];
    if g.depthwise() {
        depthwise_forward(g, x, w, &mut out);
    } else {
        let k = g.k();
        let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
        let mut col = if g.pointwise() { Vec::new() } else { vec![0.0; k * hw_out] };
        for n in 0..g.n {
            for grp in 0..g.spec.groups {
                let xg = &x[(n * g.c_in + grp * cin_g) * hw_in..][..cin_g * hw_in];
                let wg = &w[grp * cout_g * k..][..cout_g * k];
                let og = &mut out[(n * g.c_out + grp * cout_g) * hw_out..][..cout_g * hw_out];
                if g.pointwise() {
                    matmul_into(cout_g, k, hw_out, wg, xg, og, false);
                } else {
                    im2col(g, xg, &mut col);
                    matmul_into(cout_g, k, hw_out, wg, &col, og, false);
                }
            }
        }
    }
    if let Some(b) = bias {
        for n in 0..g.n {
            for (c, &bc) in b.iter().enumerate() {
                for v in &mut out[(n * g.c_out + c) * hw_out..][..hw_out] {
                    *v += bc;
                }
            }
        }
    }
    out
}

/// Gradients with respect to input, weight and (summed) bias.
pub(crate) fn conv_backward(g: &ConvGeom, x: &[f64], w: &[f64], gy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hw_in = g.h * g.w;
    let hw_out = g.ho * g.wo;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.c_out];
    for n in 0..g.n {
        for (c, gbc) in gb.iter_mut().enumerate() {
            *gbc += gy[(n * g.c_out + c) * hw_out..][..hw_out].iter().sum::<f64>();
        }
    }
    if g.depthwise() {
        depthwise_backward(g, x, w, gy, &mut gx, &mut gw);
        return (gx, gw, gb);
    }
    let k = g.k();
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let mut col = vec![0.0; k * hw_out];
    let mut gcol = vec![0.0; k * hw_out];
    for n in 0..g.n {
        for grp in 0..g.spec.groups {
            let xg = &x[(n * g.c_in + grp * cin_g) * hw_in..][..cin_g * hw_in];
            let wg = &w[grp * cout_g * k..][..cout_g * k];
            let gyg = &gy[(n * g.c_out + grp * cout_g) * hw_out..][..cout_g * hw_out];
            let gwg = &mut gw[grp * cout_g * k..][..cout_g * k];
            let gxg = &mut gx[(n * g.c_in + grp * cin_g) * hw_in..][..cin_g * hw_in];
            if g.pointwise() {
                matmul_a_bt(cout_g, hw_out, k, gyg, xg, gwg, true);
                matmul_at_b(k, cout_g, hw_out, wg, gyg, gxg, false);
            } else {
                im2col(g, xg, &mut col);
                matmul_a_bt(cout_g, hw_out, k, gyg, &col, gwg, true);
                matmul_at_b(k, cout_g, hw_out, wg, gyg, &mut gcol, false);
                col2im_add(g, &gcol, gxg);
            }
        }
    }
    (gx, gw, gb)
}
