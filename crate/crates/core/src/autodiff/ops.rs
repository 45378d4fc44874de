use std::rc::Rc;

use super::Var;
use crate::tensor::Tensor;

pub fn add<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let value = a.value().zip_map(&b.value(), |x, y| x + y);
    a.tape()
        .op(value, &[a, b], |g, _| vec![Some(g.clone()), Some(g.clone())])
}

pub fn sub<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let value = a.value().zip_map(&b.value(), |x, y| x - y);
    a.tape()
        .op(value, &[a, b], |g, _| vec![Some(g.clone()), Some(g.map(|x| -x))])
}

pub fn mul<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let (av, bv) = (a.value(), b.value());
    let value = av.zip_map(&bv, |x, y| x * y);
    a.tape().op(value, &[a, b], move |g, needs| {
        vec![
            needs[0].then(|| g.zip_map(&bv, |g, y| g * y)),
            needs[1].then(|| g.zip_map(&av, |g, x| g * x)),
        ]
    })
}

pub fn scale(a: Var<'_>, factor: f64) -> Var<'_> {
    let value = a.value().map(|x| x * factor);
    a.tape()
        .op(value, &[a], move |g, _| vec![Some(g.map(|x| x * factor))])
}

pub fn relu(a: Var<'_>) -> Var<'_> {
    let value = a.value().map(|x| x.max(0.0));
    let out = Rc::new(value.clone());
    a.tape().op(value, &[a], move |g, _| {
        vec![Some(g.zip_map(&out, |g, y| if y > 0.0 { g } else { 0.0 }))]
    })
}

/// `ln(1 + e^x)`, evaluated without overflow.
pub fn softplus(a: Var<'_>) -> Var<'_> {
    let input = a.value();
    let value = input.map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
    a.tape().op(value, &[a], move |g, _| {
        vec![Some(g.zip_map(&input, |g, x| g * sigmoid(x)))]
    })
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sum(a: Var<'_>) -> Var<'_> {
    let input_shape = a.shape();
    let value = Tensor::scalar(a.value().sum());
    a.tape().op(value, &[a], move |g, _| {
        vec![Some(Tensor::full(input_shape.clone(), g.item()))]
    })
}

/// Identity in the forward pass, zero gradient in the backward pass.
pub fn stop_gradient(a: Var<'_>) -> Var<'_> {
    a.tape().constant_rc(a.value())
}

/// Concatenates NCHW tensors along the channel axis.
pub fn concat_channels<'t>(inputs: &[Var<'t>]) -> Var<'t> {
    assert!(!inputs.is_empty(), "concat of nothing");
    let values: Vec<Rc<Tensor>> = inputs.iter().map(|v| v.value()).collect();
    let (n, _, h, w) = values[0].nchw();
    let channels: Vec<usize> = values
        .iter()
        .map(|v| {
            let (vn, c, vh, vw) = v.nchw();
            assert_eq!((vn, vh, vw), (n, h, w), "concat spatial mismatch");
            c
        })
        .collect();
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for (v, &c) in values.iter().zip(&channels) {
            data.extend_from_slice(&v.data()[b * c * plane..(b + 1) * c * plane]);
        }
    }
    let value = Tensor::from_parts(vec![n, total, h, w], data);
    inputs[0].tape().op(value, inputs, move |g, needs| {
        let mut offset = 0;
        channels
            .iter()
            .zip(needs)
            .map(|(&c, &need)| {
                let start = offset;
                offset += c;
                need.then(|| {
                    let mut out = Vec::with_capacity(n * c * plane);
                    for b in 0..n {
                        let base = (b * total + start) * plane;
                        out.extend_from_slice(&g.data()[base..base + c * plane]);
                    }
                    Tensor::from_parts(vec![n, c, h, w], out)
                })
            })
            .collect()
    })
}

/// Softmax over the channel axis of an NCHW tensor.
pub fn softmax_channels(a: Var<'_>) -> Var<'_> {
    let input = a.value();
    let (n, c, h, w) = input.nchw();
    let plane = h * w;
    let mut data = vec![0.0; input.numel()];
    let x = input.data();
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let max = (0..c)
                .map(|k| x[base + k * plane + p])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for k in 0..c {
                let e = (x[base + k * plane + p] - max).exp();
                data[base + k * plane + p] = e;
                denom += e;
            }
            for k in 0..c {
                data[base + k * plane + p] /= denom;
            }
        }
    }
    let value = Tensor::from_parts(vec![n, c, h, w], data);
    let out = Rc::new(value.clone());
    a.tape().op(value, &[a], move |g, _| {
        let y = out.data();
        let gd = g.data();
        let mut dx = vec![0.0; y.len()];
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let dot: f64 = (0..c)
                    .map(|k| gd[base + k * plane + p] * y[base + k * plane + p])
                    .sum();
                for k in 0..c {
                    let i = base + k * plane + p;
                    dx[i] = y[i] * (gd[i] - dot);
                }
            }
        }
        vec![Some(Tensor::from_parts(vec![n, c, h, w], dx))]
    })
}

pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].fill(0.0);
        }
        return;
    }
    // SAFETY: every caller passes slices covering the strided extents,
    // and `c` is a dense row-major m x n block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `[M, K] x [K, N] -> [M, N]`.
pub fn matmul<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let (av, bv) = (a.value(), b.value());
    let (m, k) = match av.shape() {
        &[m, k] => (m, k),
        s => panic!("matmul lhs must be rank 2, got {s:?}"),
    };
    let n = match bv.shape() {
        &[bk, n] if bk == k => n,
        s => panic!("matmul rhs {s:?} incompatible with [{m}, {k}]"),
    };
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, av.data(), (k as isize, 1), bv.data(), (n as isize, 1), 0.0, &mut out);
    let value = Tensor::from_parts(vec![m, n], out);
    a.tape().op(value, &[a, b], move |g, needs| {
        let da = needs[0].then(|| {
            // dA = G B^T
            let mut da = vec![0.0; m * k];
            gemm(m, n, k, g.data(), (n as isize, 1), bv.data(), (1, n as isize), 0.0, &mut da);
            Tensor::from_parts(vec![m, k], da)
        });
        let db = needs[1].then(|| {
            // dB = A^T G
            let mut db = vec![0.0; k * n];
            gemm(k, m, n, av.data(), (1, k as isize), g.data(), (n as isize, 1), 0.0, &mut db);
            Tensor::from_parts(vec![k, n], db)
        });
        vec![da, db]
    })
}

/// Adds a `[N]` bias to every row of an `[M, N]` matrix.
pub fn add_row_bias<'t>(a: Var<'t>, bias: Var<'t>) -> Var<'t> {
    let av = a.value();
    let bv = bias.value();
    let n = bv.numel();
    let (m, an) = match av.shape() {
        &[m, an] => (m, an),
        s => panic!("add_row_bias needs rank 2, got {s:?}"),
    };
    assert_eq!(an, n, "bias width mismatch");
    let mut data = av.data().to_vec();
    for row in data.chunks_mut(n) {
        for (x, b) in row.iter_mut().zip(bv.data()) {
            *x += b;
        }
    }
    let value = Tensor::from_parts(vec![m, n], data);
    let bias_shape = bv.shape().to_vec();
    a.tape().op(value, &[a, bias], move |g, needs| {
        let db = needs[1].then(|| {
            let mut db = vec![0.0; n];
            for row in g.data().chunks(n) {
                for (d, x) in db.iter_mut().zip(row) {
                    *d += x;
                }
            }
            Tensor::from_parts(bias_shape.clone(), db)
        });
        vec![needs[0].then(|| g.clone()), db]
    })
}

/// Selects rows of an `[R, C]` matrix; repeated indices are allowed.
pub fn index_rows<'t>(a: Var<'t>, rows: Rc<Vec<usize>>) -> Var<'t> {
    let av = a.value();
    let (r, c) = match av.shape() {
        &[r, c] => (r, c),
        s => panic!("index_rows needs rank 2, got {s:?}"),
    };
    let mut data = Vec::with_capacity(rows.len() * c);
    for &i in rows.iter() {
        assert!(i < r, "row index {i} out of range for {r} rows");
        data.extend_from_slice(&av.data()[i * c..(i + 1) * c]);
    }
    let value = Tensor::from_parts(vec![rows.len(), c], data);
    a.tape().op(value, &[a], move |g, _| {
        let mut da = vec![0.0; r * c];
        for (j, &i) in rows.iter().enumerate() {
            for (d, x) in da[i * c..(i + 1) * c].iter_mut().zip(&g.data()[j * c..(j + 1) * c]) {
                *d += x;
            }
        }
        vec![Some(Tensor::from_parts(vec![r, c], da))]
    })
}

/// Mean of consecutive row segments: rows `bounds[i]..bounds[i + 1]` of an
/// `[R, C]` matrix become row `i` of the output.
pub fn segment_mean<'t>(a: Var<'t>, bounds: Rc<Vec<usize>>) -> Var<'t> {
    let av = a.value();
    let (r, c) = match av.shape() {
        &[r, c] => (r, c),
        s => panic!("segment_mean needs rank 2, got {s:?}"),
    };
    assert_eq!(bounds.last().copied(), Some(r), "segments must cover every row");
    let segments = bounds.len() - 1;
    let mut data = vec![0.0; segments * c];
    for s in 0..segments {
        let (lo, hi) = (bounds[s], bounds[s + 1]);
        assert!(hi > lo, "empty segment {s}");
        let inv = 1.0 / (hi - lo) as f64;
        let out = &mut data[s * c..(s + 1) * c];
        for row in lo..hi {
            for (o, x) in out.iter_mut().zip(&av.data()[row * c..(row + 1) * c]) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
    }
    let value = Tensor::from_parts(vec![segments, c], data);
    a.tape().op(value, &[a], move |g, _| {
        let mut da = vec![0.0; r * c];
        for s in 0..segments {
            let (lo, hi) = (bounds[s], bounds[s + 1]);
            let inv = 1.0 / (hi - lo) as f64;
            let gs = &g.data()[s * c..(s + 1) * c];
            for row in lo..hi {
                for (d, x) in da[row * c..(row + 1) * c].iter_mut().zip(gs) {
                    *d = x * inv;
                }
            }
        }
        vec![Some(Tensor::from_parts(vec![r, c], da))]
    })
}

#[cfg(test)]
mod tests {
    use super::super::testing::{check_gradients, seeded};
    use super::super::Tape;
    use super::*;

    #[test]
    fn elementwise_gradients() {
        let a = seeded(&[2, 3], 1);
        let b = seeded(&[2, 3], 2);
        let err = check_gradients(&[a, b], |_, v| {
            mul(add(v[0], v[1]), sub(v[0], scale(v[1], 0.3)))
                .softplus()
                .sum()
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let a = Tensor::new([4], vec![-1.0, -0.2, 0.3, 2.0]).unwrap();
        let err = check_gradients(&[a], |_, v| mul(relu(v[0]), v[0]).sum());
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        let tape = Tape::inference();
        let x = tape.constant(Tensor::new([3], vec![-800.0, 0.0, 800.0]).unwrap());
        let y = softplus(x).value();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(y.data()[2], 800.0);
    }

    #[test]
    fn matmul_and_bias_gradients() {
        let a = seeded(&[3, 4], 3);
        let b = seeded(&[4, 2], 4);
        let bias = seeded(&[2], 5);
        let w = seeded(&[3, 2], 6);
        let err = check_gradients(&[a, b, bias, w], |_, v| {
            mul(add_row_bias(matmul(v[0], v[1]), v[2]), v[3]).sum()
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn matmul_matches_naive_product() {
        let a = seeded(&[3, 5], 7);
        let b = seeded(&[5, 4], 8);
        let tape = Tape::inference();
        let c = matmul(tape.constant(a.clone()), tape.constant(b.clone())).value();
        for i in 0..3 {
            for j in 0..4 {
                let naive: f64 = (0..5).map(|k| a.data()[i * 5 + k] * b.data()[k * 4 + j]).sum();
                assert!((c.data()[i * 4 + j] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn row_gather_and_segment_mean_gradients() {
        let a = seeded(&[4, 3], 9);
        let w = seeded(&[3, 3], 10);
        let rows = Rc::new(vec![0, 2, 2, 3, 1, 0, 3]);
        let bounds = Rc::new(vec![0, 2, 5, 7]);
        let err = check_gradients(&[a, w], move |_, v| {
            mul(segment_mean(index_rows(v[0], rows.clone()), bounds.clone()), v[1]).sum()
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn concat_and_softmax_gradients() {
        let a = seeded(&[2, 2, 3, 3], 11);
        let b = seeded(&[2, 1, 3, 3], 12);
        let w = seeded(&[2, 3, 3, 3], 13);
        let err = check_gradients(&[a, b, w], |_, v| {
            mul(softmax_channels(concat_channels(&[v[0], v[1]])), v[2]).sum()
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn softmax_sums_to_one() {
        let tape = Tape::inference();
        let x = tape.constant(seeded(&[1, 5, 2, 2], 14).map(|v| v * 50.0));
        let y = softmax_channels(x).value();
        for p in 0..4 {
            let s: f64 = (0..5).map(|k| y.data()[k * 4 + p]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
