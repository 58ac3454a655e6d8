//! Raw slice kernels behind the tape ops.

use super::gemm::gemm;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvSpec {
            stride,
            padding,
            groups,
        }
    }

    /// Stride 1, "same" padding for an odd kernel, one group.
    pub fn same(k: usize) -> Self {
        ConvSpec::new(1, k / 2, 1)
    }

    pub fn out_extent(&self, input: usize, k: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < k || self.stride == 0 {
            return None;
        }
        Some((padded - k) / self.stride + 1)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
    pub spec: ConvSpec,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.cin / self.spec.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.spec.groups
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    fn is_depthwise(&self) -> bool {
        self.spec.groups == self.cin && self.spec.groups > 1
    }
}

fn im2col(x: &[f64], g: &ConvGeom, channels: usize, col: &mut [f64]) {
    let (k, s, p) = (g.k, g.spec.stride as isize, g.spec.padding as isize);
    let plane = g.ho * g.wo;
    for c in 0..channels {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize * s - p + ky as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        *v = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, channels: usize, dx: &mut [f64]) {
    let (k, s, p) = (g.k, g.spec.stride as isize, g.spec.padding as isize);
    let plane = g.ho * g.wo;
    for c in 0..channels {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.cout * g.ho * g.wo];
    if g.is_depthwise() {
        depthwise_forward(x, w, g, &mut out);
        return out;
    }
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let kk = cin_g * g.k * g.k;
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * plane_out]
    };
    for b in 0..g.batch {
        for grp in 0..g.spec.groups {
            let xg = &x[(b * g.cin + grp * cin_g) * plane_in..(b * g.cin + (grp + 1) * cin_g) * plane_in];
            let wg = &w[grp * cout_g * kk..(grp + 1) * cout_g * kk];
            let og = &mut out[(b * g.cout + grp * cout_g) * plane_out..(b * g.cout + (grp + 1) * cout_g) * plane_out];
            let rhs: &[f64] = if g.is_pointwise() {
                xg
            } else {
                im2col(xg, g, cin_g, &mut col);
                &col
            };
            gemm(cout_g, kk, plane_out, wg, false, rhs, false, og, 0.0);
        }
    }
    out
}

/// Returns (dx, dw).
pub(crate) fn conv2d_backward(x: &[f64], w: &[f64], dy: &[f64], g: &ConvGeom, need_dx: bool, need_dw: bool) -> (Vec<f64>, Vec<f64>) {
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    let mut dw = if need_dw { vec![0.0; w.len()] } else { Vec::new() };
    if g.is_depthwise() {
        depthwise_backward(x, w, dy, g, need_dx.then_some(&mut dx[..]), need_dw.then_some(&mut dw[..]));
        return (dx, dw);
    }
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let kk = cin_g * g.k * g.k;
    let mut col = vec![0.0; if g.is_pointwise() { 0 } else { kk * plane_out }];
    let mut dcol = vec![0.0; kk * plane_out];
    for b in 0..g.batch {
        for grp in 0..g.spec.groups {
            let xs = (b * g.cin + grp * cin_g) * plane_in;
            let xg = &x[xs..xs + cin_g * plane_in];
            let wg = &w[grp * cout_g * kk..(grp + 1) * cout_g * kk];
            let ys = (b * g.cout + grp * cout_g) * plane_out;
            let dyg = &dy[ys..ys + cout_g * plane_out];
            if need_dw {
                let rhs: &[f64] = if g.is_pointwise() {
                    xg
                } else {
                    im2col(xg, g, cin_g, &mut col);
                    &col
                };
                let dwg = &mut dw[grp * cout_g * kk..(grp + 1) * cout_g * kk];
                gemm(cout_g, plane_out, kk, dyg, false, rhs, true, dwg, 1.0);
            }
            if need_dx {
                let dxg = &mut dx[xs..xs + cin_g * plane_in];
                if g.is_pointwise() {
                    gemm(kk, cout_g, plane_out, wg, true, dyg, false, dxg, 1.0);
                } else {
                    gemm(kk, cout_g, plane_out, wg, true, dyg, false, &mut dcol, 0.0);
                    col2im(&dcol, g, cin_g, dxg);
                }
            }
        }
    }
    (dx, dw)
}

fn depthwise_forward(x: &[f64], w: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let mult = g.cout / g.cin;
    let (k, s, p) = (g.k, g.spec.stride as isize, g.spec.padding as isize);
    for b in 0..g.batch {
        for co in 0..g.cout {
            let ci = co / mult;
            let xc = &x[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
            let wc = &w[co * k * k..(co + 1) * k * k];
            let oc = &mut out[(b * g.cout + co) * g.ho * g.wo..][..g.ho * g.wo];
            for ky in 0..k {
                for oy in 0..g.ho {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let row = &xc[iy as usize * g.w..][..g.w];
                    let orow = &mut oc[oy * g.wo..][..g.wo];
                    for kx in 0..k {
                        let wv = wc[ky * k + kx];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = ox as isize * s - p + kx as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *o += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward(x: &[f64], w: &[f64], dy: &[f64], g: &ConvGeom, mut dx: Option<&mut [f64]>, mut dw: Option<&mut [f64]>) {
    let mult = g.cout / g.cin;
    let (k, s, p) = (g.k, g.spec.stride as isize, g.spec.padding as isize);
    for b in 0..g.batch {
        for co in 0..g.cout {
            let ci = co / mult;
            let xoff = (b * g.cin + ci) * g.h * g.w;
            let dyc = &dy[(b * g.cout + co) * g.ho * g.wo..][..g.ho * g.wo];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[co * k * k + ky * k + kx];
                    let mut acc = 0.0;
                    for oy in 0..g.ho {
                        let iy = oy as isize * s - p + ky as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = xoff + iy as usize * g.w;
                        for ox in 0..g.wo {
                            let ix = ox as isize * s - p + kx as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            let d = dyc[oy * g.wo + ox];
                            acc += d * x[base + ix as usize];
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[base + ix as usize] += d * wv;
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[co * k * k + ky * k + kx] += acc;
                    }
                }
            }
        }
    }
}

/// Nearest-neighbour upsampling by integer factors over NCHW planes.
pub(crate) fn upsample_nearest(x: &[f64], planes: usize, h: usize, w: usize, fy: usize, fx: usize) -> Vec<f64> {
    let (ho, wo) = (h * fy, w * fx);
    let mut out = vec![0.0; planes * ho * wo];
    for pl in 0..planes {
        let src = &x[pl * h * w..][..h * w];
        let dst = &mut out[pl * ho * wo..][..ho * wo];
        for oy in 0..ho {
            let row = &src[(oy / fy) * w..][..w];
            for ox in 0..wo {
                dst[oy * wo + ox] = row[ox / fx];
            }
        }
    }
    out
}

pub(crate) fn upsample_nearest_backward(dy: &[f64], planes: usize, h: usize, w: usize, fy: usize, fx: usize) -> Vec<f64> {
    let (ho, wo) = (h * fy, w * fx);
    let mut dx = vec![0.0; planes * h * w];
    for pl in 0..planes {
        let src = &dy[pl * ho * wo..][..ho * wo];
        let dst = &mut dx[pl * h * w..][..h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[(oy / fy) * w + ox / fx] += src[oy * wo + ox];
            }
        }
    }
    dx
}

/// Area (block-mean) downsampling by integer factors.
pub(crate) fn downsample_area(x: &[f64], planes: usize, h: usize, w: usize, fy: usize, fx: usize) -> Vec<f64> {
    let (ho, wo) = (h / fy, w / fx);
    let scale = 1.0 / (fy * fx) as f64;
    let mut out = vec![0.0; planes * ho * wo];
    for pl in 0..planes {
        let src = &x[pl * h * w..][..h * w];
        let dst = &mut out[pl * ho * wo..][..ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for dy in 0..fy {
                    for dx in 0..fx {
                        acc += src[(oy * fy + dy) * w + ox * fx + dx];
                    }
                }
                dst[oy * wo + ox] = acc * scale;
            }
        }
    }
    out
}

pub(crate) fn downsample_area_backward(dy: &[f64], planes: usize, h: usize, w: usize, fy: usize, fx: usize) -> Vec<f64> {
    let (ho, wo) = (h / fy, w / fx);
    let scale = 1.0 / (fy * fx) as f64;
    let mut dx = vec![0.0; planes * h * w];
    for pl in 0..planes {
        let src = &dy[pl * ho * wo..][..ho * wo];
        let dst = &mut dx[pl * h * w..][..h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = src[oy * wo + ox] * scale;
                for dy in 0..fy {
                    for dx in 0..fx {
                        dst[(oy * fy + dy) * w + ox * fx + dx] += g;
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
