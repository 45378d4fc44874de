use std::rc::Rc;

use super::Var;
use crate::tensor::Tensor;

/// Half-pixel linear interpolation taps `(lo, hi, weight_hi)` per output index.
fn linear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize of an NCHW tensor with half-pixel centers (no corner alignment).
pub fn resize_bilinear(x: Var<'_>, oh: usize, ow: usize) -> Var<'_> {
    let xv = x.value();
    let (n, c, h, w) = xv.nchw();
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let mut out = vec![0.0; n * c * oh * ow];
    for nc in 0..n * c {
        let xs = &xv.data()[nc * h * w..(nc + 1) * h * w];
        let os = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = xs[y0 * w + x0] * (1.0 - lx) + xs[y0 * w + x1] * lx;
                let bottom = xs[y1 * w + x0] * (1.0 - lx) + xs[y1 * w + x1] * lx;
                os[oy * ow + ox] = top * (1.0 - ly) + bottom * ly;
            }
        }
    }
    let value = Tensor::from_parts(vec![n, c, oh, ow], out);
    x.tape().op(value, &[x], move |g, _| {
        let mut dx = vec![0.0; n * c * h * w];
        for nc in 0..n * c {
            let gs = &g.data()[nc * oh * ow..(nc + 1) * oh * ow];
            let ds = &mut dx[nc * h * w..(nc + 1) * h * w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let gv = gs[oy * ow + ox];
                    ds[y0 * w + x0] += gv * (1.0 - ly) * (1.0 - lx);
                    ds[y0 * w + x1] += gv * (1.0 - ly) * lx;
                    ds[y1 * w + x0] += gv * ly * (1.0 - lx);
                    ds[y1 * w + x1] += gv * ly * lx;
                }
            }
        }
        vec![Some(Tensor::from_parts(vec![n, c, h, w], dx))]
    })
}

/// Nearest-neighbour resize (`src = floor(dst * in / out)`).
pub fn resize_nearest(x: Var<'_>, oh: usize, ow: usize) -> Var<'_> {
    let (_, _, h, w) = x.value().nchw();
    let rows = (0..oh).map(|o| o * h / oh).collect();
    let cols = (0..ow).map(|o| o * w / ow).collect();
    spatial_gather(x, rows, cols)
}

/// Output pixel `(y, x)` reads input pixel `(rows[y], cols[x])`.
pub fn spatial_gather(x: Var<'_>, rows: Vec<usize>, cols: Vec<usize>) -> Var<'_> {
    let xv = x.value();
    let (n, c, h, w) = xv.nchw();
    assert!(rows.iter().all(|&r| r < h) && cols.iter().all(|&c| c < w), "gather index out of range");
    let (oh, ow) = (rows.len(), cols.len());
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for nc in 0..n * c {
        let xs = &xv.data()[nc * h * w..(nc + 1) * h * w];
        for &r in &rows {
            out.extend(cols.iter().map(|&col| xs[r * w + col]));
        }
    }
    let value = Tensor::from_parts(vec![n, c, oh, ow], out);
    x.tape().op(value, &[x], move |g, _| {
        let mut dx = vec![0.0; n * c * h * w];
        for nc in 0..n * c {
            let gs = &g.data()[nc * oh * ow..(nc + 1) * oh * ow];
            let ds = &mut dx[nc * h * w..(nc + 1) * h * w];
            for (oy, &r) in rows.iter().enumerate() {
                for (ox, &col) in cols.iter().enumerate() {
                    ds[r * w + col] += gs[oy * ow + ox];
                }
            }
        }
        vec![Some(Tensor::from_parts(vec![n, c, h, w], dx))]
    })
}

pub fn crop(x: Var<'_>, top: usize, left: usize, h: usize, w: usize) -> Var<'_> {
    spatial_gather(x, (top..top + h).collect(), (left..left + w).collect())
}

/// Mirror index for a reflection that excludes the edge pixel, repeated as
/// often as needed for pads larger than the extent.
pub(crate) fn reflect_index(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = i % period;
    if m < len {
        m
    } else {
        period - m
    }
}

/// Reflect-pads the bottom and right edges.
pub fn reflect_pad(x: Var<'_>, bottom: usize, right: usize) -> Var<'_> {
    let (_, _, h, w) = x.value().nchw();
    let rows = (0..h + bottom).map(|i| reflect_index(i, h)).collect();
    let cols = (0..w + right).map(|i| reflect_index(i, w)).collect();
    spatial_gather(x, rows, cols)
}

/// Reads `x[n, :, pixel]` for every `(n, pixel)` into a `[K, C]` matrix.
pub fn gather_points<'t>(x: Var<'t>, index: Rc<Vec<(usize, usize)>>) -> Var<'t> {
    let xv = x.value();
    let (n, c, h, w) = xv.nchw();
    let plane = h * w;
    let mut out = Vec::with_capacity(index.len() * c);
    for &(b, p) in index.iter() {
        assert!(b < n && p < plane, "point index ({b}, {p}) out of range");
        out.extend((0..c).map(|ch| xv.data()[(b * c + ch) * plane + p]));
    }
    let value = Tensor::from_parts(vec![index.len(), c], out);
    x.tape().op(value, &[x], move |g, _| {
        let mut dx = vec![0.0; n * c * plane];
        for (k, &(b, p)) in index.iter().enumerate() {
            for ch in 0..c {
                dx[(b * c + ch) * plane + p] += g.data()[k * c + ch];
            }
        }
        vec![Some(Tensor::from_parts(vec![n, c, h, w], dx))]
    })
}

/// Writes row `k` of a `[K, C]` matrix to pixel `index[k]` of a zero canvas.
pub fn scatter_points<'t>(
    f: Var<'t>,
    index: Rc<Vec<(usize, usize)>>,
    n: usize,
    h: usize,
    w: usize,
) -> Var<'t> {
    let fv = f.value();
    let (k, c) = match fv.shape() {
        &[k, c] => (k, c),
        s => panic!("scatter_points needs [K, C], got {s:?}"),
    };
    assert_eq!(k, index.len(), "one index per row");
    let plane = h * w;
    let mut out = vec![0.0; n * c * plane];
    for (row, &(b, p)) in index.iter().enumerate() {
        assert!(b < n && p < plane, "point index ({b}, {p}) out of range");
        for ch in 0..c {
            out[(b * c + ch) * plane + p] += fv.data()[row * c + ch];
        }
    }
    let value = Tensor::from_parts(vec![n, c, h, w], out);
    f.tape().op(value, &[f], move |g, _| {
        let mut df = Vec::with_capacity(k * c);
        for &(b, p) in index.iter() {
            df.extend((0..c).map(|ch| g.data()[(b * c + ch) * plane + p]));
        }
        vec![Some(Tensor::from_parts(vec![k, c], df))]
    })
}
