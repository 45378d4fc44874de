use std::rc::Rc;

use super::ops::gemm;
use super::Var;
use crate::tensor::Tensor;

/// Stride, zero padding, dilation and grouping of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    /// (rows, cols) of zero padding on each side.
    pub padding: (usize, usize),
    /// (rows, cols) dilation.
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl ConvGeometry {
    /// Stride-1 geometry whose output matches the input extent for an odd kernel.
    pub fn same(kernel: (usize, usize), dilation: (usize, usize)) -> Self {
        Self {
            stride: 1,
            padding: (dilation.0 * (kernel.0 - 1) / 2, dilation.1 * (kernel.1 - 1) / 2),
            dilation,
            groups: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> (usize, usize) {
        let span_h = self.dilation.0 * (kh - 1) + 1;
        let span_w = self.dilation.1 * (kw - 1) + 1;
        let ph = h + 2 * self.padding.0;
        let pw = w + 2 * self.padding.1;
        assert!(
            ph >= span_h && pw >= span_w,
            "kernel span {span_h}x{span_w} larger than padded input {ph}x{pw}"
        );
        ((ph - span_h) / self.stride + 1, (pw - span_w) / self.stride + 1)
    }
}

#[derive(Clone, Copy)]
#[allow(dead_code)]
struct Plan {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cg: usize,
    og: usize,
    geo: ConvGeometry,
}

impl Plan {
    fn kk(&self) -> usize {
        self.cg * self.kh * self.kw
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geo.stride == 1 && self.geo.padding == (0, 0)
    }

    /// Source coordinate for output index `o` and kernel tap `k` along an axis.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, dil: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + k * dil) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let (oh, ow, ohw) = (self.oh, self.ow, self.oh * self.ow);
        let g = self.geo;
        for c in 0..self.cg {
            let xc = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        match Self::src(oy, ki, g.stride, g.dilation.0, g.padding.0, self.h) {
                            None => line.fill(0.0),
                            Some(iy) => {
                                let xrow = &xc[iy * self.w..(iy + 1) * self.w];
                                for (ox, d) in line.iter_mut().enumerate() {
                                    *d = match Self::src(ox, kj, g.stride, g.dilation.1, g.padding.1, self.w) {
                                        Some(ix) => xrow[ix],
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

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let (oh, ow, ohw) = (self.oh, self.ow, self.oh * self.ow);
        let g = self.geo;
        for c in 0..self.cg {
            let dxc = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &col[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let Some(iy) = Self::src(oy, ki, g.stride, g.dilation.0, g.padding.0, self.h)
                        else {
                            continue;
                        };
                        let line = &src[oy * ow..(oy + 1) * ow];
                        for (ox, v) in line.iter().enumerate() {
                            if let Some(ix) = Self::src(ox, kj, g.stride, g.dilation.1, g.padding.1, self.w) {
                                dxc[iy * self.w + ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2D cross-correlation of an NCHW input with an `[O, C/groups, kh, kw]` kernel.
pub fn conv2d<'t>(x: Var<'t>, weight: Var<'t>, bias: Option<Var<'t>>, geo: ConvGeometry) -> Var<'t> {
    let xv = x.value();
    let wv = weight.value();
    let (n, cin, h, w) = xv.nchw();
    let (cout, cg, kh, kw) = wv.nchw();
    assert!(geo.groups >= 1 && cin % geo.groups == 0 && cout % geo.groups == 0);
    assert_eq!(cg * geo.groups, cin, "kernel expects {} input channels, got {cin}", cg * geo.groups);
    let (oh, ow) = geo.output_size(h, w, kh, kw);
    let plan = Plan {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
        cg,
        og: cout / geo.groups,
        geo,
    };
    let (kk, ohw, hw) = (plan.kk(), oh * ow, h * w);

    let mut out = vec![0.0; n * cout * ohw];
    let mut col = if plan.pointwise() { Vec::new() } else { vec![0.0; kk * ohw] };
    for b in 0..n {
        for g in 0..geo.groups {
            let xs = &xv.data()[(b * cin + g * cg) * hw..(b * cin + (g + 1) * cg) * hw];
            let cols: &[f64] = if plan.pointwise() {
                xs
            } else {
                plan.im2col(xs, &mut col);
                &col
            };
            let wg = &wv.data()[g * plan.og * kk..(g + 1) * plan.og * kk];
            let os = &mut out[(b * cout + g * plan.og) * ohw..(b * cout + (g + 1) * plan.og) * ohw];
            gemm(plan.og, kk, ohw, wg, (kk as isize, 1), cols, (ohw as isize, 1), 0.0, os);
        }
    }
    let bv = bias.map(|b| b.value());
    if let Some(bv) = &bv {
        assert_eq!(bv.numel(), cout, "bias length");
        for b in 0..n {
            for (o, &bias) in bv.data().iter().enumerate() {
                out[(b * cout + o) * ohw..(b * cout + o + 1) * ohw]
                    .iter_mut()
                    .for_each(|v| *v += bias);
            }
        }
    }
    let value = Tensor::from_parts(vec![n, cout, oh, ow], out);

    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    let has_bias = bv.is_some();
    x.tape().op(value, &inputs, move |gout, needs| {
        let gd = gout.data();
        let mut dx = needs[0].then(|| vec![0.0; n * cin * hw]);
        let mut dw = needs[1].then(|| vec![0.0; wv.numel()]);
        let mut col = vec![0.0; if plan.pointwise() { 0 } else { kk * ohw }];
        let mut dcol = vec![0.0; if dx.is_some() { kk * ohw } else { 0 }];
        for b in 0..n {
            for g in 0..geo.groups {
                let gs = &gd[(b * cout + g * plan.og) * ohw..(b * cout + (g + 1) * plan.og) * ohw];
                let wg = &wv.data()[g * plan.og * kk..(g + 1) * plan.og * kk];
                if let Some(dw) = dw.as_mut() {
                    let xs = &xv.data()[(b * cin + g * cg) * hw..(b * cin + (g + 1) * cg) * hw];
                    let cols: &[f64] = if plan.pointwise() {
                        xs
                    } else {
                        plan.im2col(xs, &mut col);
                        &col
                    };
                    let dwg = &mut dw[g * plan.og * kk..(g + 1) * plan.og * kk];
                    gemm(plan.og, ohw, kk, gs, (ohw as isize, 1), cols, (1, ohw as isize), 1.0, dwg);
                }
                if let Some(dx) = dx.as_mut() {
                    let dxs = &mut dx[(b * cin + g * cg) * hw..(b * cin + (g + 1) * cg) * hw];
                    if plan.pointwise() {
                        gemm(kk, plan.og, ohw, wg, (1, kk as isize), gs, (ohw as isize, 1), 1.0, dxs);
                    } else {
                        gemm(kk, plan.og, ohw, wg, (1, kk as isize), gs, (ohw as isize, 1), 0.0, &mut dcol);
                        plan.col2im(&dcol, dxs);
                    }
                }
            }
        }
        let mut grads = vec![
            dx.map(|d| Tensor::from_parts(vec![n, cin, h, w], d)),
            dw.map(|d| Tensor::from_parts(wv.shape().to_vec(), d)),
        ];
        if has_bias {
            grads.push(needs[2].then(|| {
                let mut db = vec![0.0; cout];
                for b in 0..n {
                    for (o, d) in db.iter_mut().enumerate() {
                        *d += gd[(b * cout + o) * ohw..(b * cout + o + 1) * ohw].iter().sum::<f64>();
                    }
                }
                Tensor::from_parts(vec![cout], db)
            }));
        }
        grads
    })
}

/// Group normalization with per-channel affine parameters.
pub fn group_norm<'t>(x: Var<'t>, gamma: Var<'t>, beta: Var<'t>, groups: usize, eps: f64) -> Var<'t> {
    let xv = x.value();
    let (n, c, h, w) = xv.nchw();
    assert!(groups >= 1 && c % groups == 0, "{c} channels not divisible into {groups} groups");
    let (gv, bv) = (gamma.value(), beta.value());
    assert_eq!((gv.numel(), bv.numel()), (c, c));
    let cpg = c / groups;
    let plane = h * w;
    let m = (cpg * plane) as f64;

    let mut xhat = vec![0.0; xv.numel()];
    let mut inv_std = vec![0.0; n * groups];
    for b in 0..n {
        for g in 0..groups {
            let range = (b * c + g * cpg) * plane..(b * c + (g + 1) * cpg) * plane;
            let xs = &xv.data()[range.clone()];
            let mean = xs.iter().sum::<f64>() / m;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[b * groups + g] = inv;
            for (o, v) in xhat[range].iter_mut().zip(xs) {
                *o = (v - mean) * inv;
            }
        }
    }
    let mut out = vec![0.0; xv.numel()];
    for b in 0..n {
        for ch in 0..c {
            let range = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            let (ga, be) = (gv.data()[ch], bv.data()[ch]);
            for (o, xh) in out[range.clone()].iter_mut().zip(&xhat[range]) {
                *o = xh * ga + be;
            }
        }
    }
    let value = Tensor::from_parts(vec![n, c, h, w], out);
    let xhat = Rc::new(xhat);
    x.tape().op(value, &[x, gamma, beta], move |gout, needs| {
        let gd = gout.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let range = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                for (g, xh) in gd[range.clone()].iter().zip(&xhat[range]) {
                    dgamma[ch] += g * xh;
                    dbeta[ch] += g;
                }
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; n * c * plane];
            for b in 0..n {
                for g in 0..groups {
                    let inv = inv_std[b * groups + g];
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for ch in g * cpg..(g + 1) * cpg {
                        let ga = gv.data()[ch];
                        let range = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                        for (gr, xh) in gd[range.clone()].iter().zip(&xhat[range]) {
                            let d = gr * ga;
                            sum_d += d;
                            sum_dx += d * xh;
                        }
                    }
                    for ch in g * cpg..(g + 1) * cpg {
                        let ga = gv.data()[ch];
                        let range = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                        for i in range {
                            let d = gd[i] * ga;
                            dx[i] = inv / m * (m * d - sum_d - xhat[i] * sum_dx);
                        }
                    }
                }
            }
            Tensor::from_parts(vec![n, c, h, w], dx)
        });
        vec![
            dx,
            needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
            needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
        ]
    })
}

/// Max pooling with implicit `-inf` padding. Ties resolve to the first
/// window position in row-major order.
pub fn max_pool2d(x: Var<'_>, kernel: usize, stride: usize, padding: usize) -> Var<'_> {
    let xv = x.value();
    let (n, c, h, w) = xv.nchw();
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let mut out = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0usize; out.len()];
    for nc in 0..n * c {
        let xs = &xv.data()[nc * h * w..(nc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ki in 0..kernel {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kj in 0..kernel {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let idx = iy as usize * w + ix as usize;
                        if xs[idx] > best || best_idx == usize::MAX {
                            best = xs[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = nc * oh * ow + oy * ow + ox;
                out[o] = best;
                argmax[o] = nc * h * w + best_idx;
            }
        }
    }
    let value = Tensor::from_parts(vec![n, c, oh, ow], out);
    x.tape().op(value, &[x], move |g, _| {
        let mut dx = vec![0.0; n * c * h * w];
        for (gv, &src) in g.data().iter().zip(&argmax) {
            dx[src] += gv;
        }
        vec![Some(Tensor::from_parts(vec![n, c, h, w], dx))]
    })
}

#[cfg(test)]
mod tests {
    use super::super::testing::{check_gradients, seeded};
    use super::super::{mul, Tape};
    use super::*;

    /// Direct seven-loop convolution, independent of the im2col path.
    fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, geo: ConvGeometry) -> Tensor {
        let (n, cin, h, wd) = x.nchw();
        let (cout, cg, kh, kw) = w.nchw();
        let (oh, ow) = geo.output_size(h, wd, kh, kw);
        let og = cout / geo.groups;
        Tensor::from_fn(vec![n, cout, oh, ow], |i| {
            let ox = i % ow;
            let oy = (i / ow) % oh;
            let o = (i / (ow * oh)) % cout;
            let bn = i / (ow * oh * cout);
            let g = o / og;
            let mut acc = b.map_or(0.0, |b| b.data()[o]);
            for c in 0..cg {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let iy = (oy * geo.stride + ki * geo.dilation.0) as isize - geo.padding.0 as isize;
                        let ix = (ox * geo.stride + kj * geo.dilation.1) as isize - geo.padding.1 as isize;
                        if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                            continue;
                        }
                        let xi = ((bn * cin + g * cg + c) * h + iy as usize) * wd + ix as usize;
                        let wi = ((o * cg + c) * kh + ki) * kw + kj;
                        acc += x.data()[xi] * w.data()[wi];
                    }
                }
            }
            acc
        })
    }

    fn geometries() -> Vec<(ConvGeometry, [usize; 4], [usize; 4])> {
        vec![
            (ConvGeometry::same((3, 3), (1, 1)), [2, 3, 6, 5], [4, 3, 3, 3]),
            (ConvGeometry::same((3, 3), (1, 1)).with_stride(2), [1, 2, 7, 6], [3, 2, 3, 3]),
            (ConvGeometry::same((3, 3), (2, 3)), [1, 2, 7, 8], [2, 2, 3, 3]),
            (ConvGeometry::same((3, 3), (1, 1)).with_groups(4), [1, 4, 5, 5], [4, 1, 3, 3]),
            (ConvGeometry::same((1, 1), (1, 1)), [2, 3, 4, 4], [5, 3, 1, 1]),
            (ConvGeometry::same((1, 1), (1, 1)).with_stride(2), [1, 3, 5, 5], [2, 3, 1, 1]),
            (ConvGeometry::same((7, 7), (1, 1)).with_stride(2), [1, 2, 9, 9], [2, 2, 7, 7]),
            (ConvGeometry::same((3, 3), (6, 9)).with_groups(2), [1, 2, 4, 5], [2, 1, 3, 3]),
        ]
    }

    #[test]
    fn forward_matches_naive_convolution() {
        for (i, (geo, xs, ws)) in geometries().into_iter().enumerate() {
            let x = seeded(&xs, 100 + i as u64);
            let w = seeded(&ws, 200 + i as u64);
            let b = seeded(&[ws[0]], 300 + i as u64);
            let tape = Tape::inference();
            let got = conv2d(tape.constant(x.clone()), tape.constant(w.clone()), Some(tape.constant(b.clone())), geo)
                .value();
            let want = naive_conv(&x, &w, Some(&b), geo);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "geometry {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        for (i, (geo, xs, ws)) in geometries().into_iter().enumerate() {
            let x = seeded(&xs, 400 + i as u64);
            let w = seeded(&ws, 500 + i as u64);
            let b = seeded(&[ws[0]], 600 + i as u64);
            let tape = Tape::inference();
            let out_shape = conv2d(tape.constant(x.clone()), tape.constant(w.clone()), None, geo).shape();
            let probe = seeded(&out_shape, 700 + i as u64);
            let err = check_gradients(&[x, w, b, probe], move |_, v| {
                mul(conv2d(v[0], v[1], Some(v[2]), geo), v[3]).sum()
            });
            assert!(err < 1e-5, "geometry {i}: {err}");
        }
    }

    #[test]
    fn stride_two_output_is_ceil_half() {
        let geo = ConvGeometry::same((3, 3), (1, 1)).with_stride(2);
        assert_eq!(geo.output_size(7, 8, 3, 3), (4, 4));
        assert_eq!(geo.output_size(200, 1000, 3, 3), (100, 500));
    }

    #[test]
    fn group_norm_gradient_and_statistics() {
        let x = seeded(&[2, 4, 3, 3], 21);
        let gamma = seeded(&[4], 22);
        let beta = seeded(&[4], 23);
        let probe = seeded(&[2, 4, 3, 3], 24);
        let err = check_gradients(&[x.clone(), gamma, beta, probe], |_, v| {
            mul(group_norm(v[0], v[1], v[2], 2, 1e-5), v[3]).sum()
        });
        assert!(err < 1e-5, "{err}");

        let tape = Tape::inference();
        let y = group_norm(
            tape.constant(x),
            tape.constant(Tensor::full([4], 1.0)),
            tape.constant(Tensor::zeros([4])),
            2,
            0.0,
        )
        .value();
        let group = &y.data()[0..18];
        let mean = group.iter().sum::<f64>() / 18.0;
        let var = group.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 18.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn max_pool_picks_window_maxima() {
        let x = Tensor::new([1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let tape = Tape::new();
        let xv = tape.leaf(x);
        let y = max_pool2d(xv, 3, 2, 1);
        assert_eq!(y.value().data(), &[4.0, 5.0, 7.0, 8.0]);
        let g = tape.backward(y.sum());
        assert_eq!(g.wrt(xv).unwrap().data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);

        let x = seeded(&[1, 2, 5, 5], 31);
        let probe = seeded(&[1, 2, 3, 3], 32);
        let err = check_gradients(&[x, probe], |_, v| mul(max_pool2d(v[0], 3, 2, 1), v[1]).sum());
        assert!(err < 1e-6, "{err}");
    }
}
