//! Scalar-loop reference implementations for the self-test and the
//! integration tests.
//!
//! Everything here is written with plain nested loops over `Vec<f64>` and
//! deliberately avoids the crate's tensor ops, so agreement with the
//! library is meaningful.

/// Six-nested-loop cross-correlation. `x` is `[n, c, h, w]`, `w` is
/// `[cout, c / groups, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let cg = c / groups;
    let og = cout / groups;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for b in 0..n {
        for o in 0..cout {
            let g = o / og;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((b * c + g * cg + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w[((o * cg + ci) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * cout + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, [n, cout, ho, wo])
}

/// Parameters of one adaptive hypergraph layer in plain row-major form.
pub struct AhcRef {
    pub n: usize,
    pub c: usize,
    pub m: usize,
    pub heads: usize,
    /// `[m][c]`
    pub p0: Vec<f64>,
    /// `[m * c][2 * c]`
    pub phi_w: Vec<f64>,
    /// `[m * c]`
    pub phi_b: Vec<f64>,
    /// `[c][c]` each
    pub w_pre: Vec<f64>,
    pub w_e: Vec<f64>,
    pub w_v: Vec<f64>,
}

fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

impl AhcRef {
    /// Participation matrix `[n][m]` for vertices `x[n][c]`.
    pub fn participation(&self, x: &[f64]) -> Vec<f64> {
        let (n, c, m, h) = (self.n, self.c, self.m, self.heads);
        // context: mean and max over vertices
        let mut ctx = vec![0.0; 2 * c];
        for ch in 0..c {
            let mut s = 0.0;
            let mut mx = f64::NEG_INFINITY;
            for i in 0..n {
                s += x[i * c + ch];
                mx = mx.max(x[i * c + ch]);
            }
            ctx[ch] = s / n as f64;
            ctx[c + ch] = mx;
        }
        // prototypes P = P0 + phi(ctx)
        let mut p = vec![0.0; m * c];
        for r in 0..m * c {
            let mut acc = self.phi_b[r];
            for j in 0..2 * c {
                acc += self.phi_w[r * 2 * c + j] * ctx[j];
            }
            p[r] = self.p0[r] + acc;
        }
        // queries
        let mut z = vec![0.0; n * c];
        for i in 0..n {
            for o in 0..c {
                let mut acc = 0.0;
                for j in 0..c {
                    acc += self.w_pre[o * c + j] * x[i * c + j];
                }
                z[i * c + o] = acc;
            }
        }
        // head-averaged scaled similarity
        let d = c / h;
        let mut s = vec![0.0; n * m];
        for i in 0..n {
            for e in 0..m {
                let mut tot = 0.0;
                for t in 0..h {
                    let mut dot = 0.0;
                    for q in 0..d {
                        dot += z[i * c + t * d + q] * p[e * c + t * d + q];
                    }
                    tot += dot / (d as f64).sqrt();
                }
                s[i * m + e] = tot / h as f64;
            }
        }
        // softmax over vertices for every hyperedge
        let mut a = vec![0.0; n * m];
        for e in 0..m {
            let mx = (0..n).map(|i| s[i * m + e]).fold(f64::NEG_INFINITY, f64::max);
            let den: f64 = (0..n).map(|i| (s[i * m + e] - mx).exp()).sum();
            for i in 0..n {
                a[i * m + e] = (s[i * m + e] - mx).exp() / den;
            }
        }
        a
    }

    /// Vertex → hyperedge → vertex message passing with SiLU.
    pub fn convolve(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        let (n, c, m) = (self.n, self.c, self.m);
        let mut f = vec![0.0; m * c];
        for e in 0..m {
            let mut agg = vec![0.0; c];
            for i in 0..n {
                for ch in 0..c {
                    agg[ch] += a[i * m + e] * x[i * c + ch];
                }
            }
            for o in 0..c {
                let mut acc = 0.0;
                for j in 0..c {
                    acc += self.w_e[o * c + j] * agg[j];
                }
                f[e * c + o] = silu(acc);
            }
        }
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let mut agg = vec![0.0; c];
            for e in 0..m {
                for ch in 0..c {
                    agg[ch] += a[i * m + e] * f[e * c + ch];
                }
            }
            for o in 0..c {
                let mut acc = 0.0;
                for j in 0..c {
                    acc += self.w_v[o * c + j] * agg[j];
                }
                out[i * c + o] = silu(acc);
            }
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let a = self.participation(x);
        self.convolve(x, &a)
    }
}

/// Intersection over union of `[x1, y1, x2, y2]` boxes.
pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let ua = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if ua <= 0.0 {
        0.0
    } else {
        inter / ua
    }
}

/// Brute-force greedy NMS: repeatedly take the highest-scoring remaining
/// box and discard every same-class box overlapping it above `thr`.
/// Returns indices into the input in output order.
pub fn nms_reference(boxes: &[[f64; 4]], classes: &[usize], scores: &[f64], thr: f64) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; boxes.len()];
    let mut keep = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..boxes.len() {
            if !alive[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) if scores[i] > scores[b] => Some(i),
                other => other,
            };
        }
        let Some(b) = best else { break };
        keep.push(b);
        alive[b] = false;
        for j in 0..boxes.len() {
            if alive[j] && classes[j] == classes[b] && iou(boxes[b], boxes[j]) > thr {
                alive[j] = false;
            }
        }
    }
    keep
}
