//! Layer kernels on flat row-major buffers.
//!
//! All loops accumulate sequentially in row-major order; this fixed order is
//! part of the reproducibility contract.

/// y[n,o] = b[o] + sum_i w[o*in+i] * x[n,i]
pub(crate) fn dense_forward(
    w: &[f32],
    b: &[f32],
    x: &[f32],
    n: usize,
    in_dim: usize,
    out_dim: usize,
    y: &mut [f32],
) {
    debug_assert_eq!(w.len(), in_dim * out_dim);
    debug_assert_eq!(x.len(), n * in_dim);
    debug_assert_eq!(y.len(), n * out_dim);
    for s in 0..n {
        let xs = &x[s * in_dim..(s + 1) * in_dim];
        let ys = &mut y[s * out_dim..(s + 1) * out_dim];
        for (o, yo) in ys.iter_mut().enumerate() {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = b[o];
            for (wv, xv) in row.iter().zip(xs) {
                acc = wv.mul_add(*xv, acc);
            }
            *yo = acc;
        }
    }
}

/// Given dL/dy, accumulates dL/dw and dL/db and writes dL/dx.
pub(crate) fn dense_backward(
    w: &[f32],
    x: &[f32],
    dy: &[f32],
    n: usize,
    in_dim: usize,
    out_dim: usize,
    dw: &mut [f32],
    db: &mut [f32],
    dx: &mut [f32],
) {
    dx.fill(0.0);
    for s in 0..n {
        let xs = &x[s * in_dim..(s + 1) * in_dim];
        let dys = &dy[s * out_dim..(s + 1) * out_dim];
        let dxs = &mut dx[s * in_dim..(s + 1) * in_dim];
        for (o, &g) in dys.iter().enumerate() {
            db[o] += g;
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let drow = &mut dw[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                drow[i] = g.mul_add(xs[i], drow[i]);
                dxs[i] = g.mul_add(row[i], dxs[i]);
            }
        }
    }
}

/// Valid (no padding), stride-1 3x3 convolution.
/// x: [n, ci, h, w], w: [co, ci, 3, 3], y: [n, co, h-2, w-2]
pub(crate) fn conv3_forward(
    w: &[f32],
    b: &[f32],
    x: &[f32],
    n: usize,
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    y: &mut [f32],
) {
    let oh = h - 2;
    let ow = wd - 2;
    debug_assert_eq!(y.len(), n * co * oh * ow);
    for s in 0..n {
        for oc in 0..co {
            let bias = b[oc];
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias;
                    for ic in 0..ci {
                        let xbase = ((s * ci + ic) * h + i) * wd + j;
                        let wbase = (oc * ci + ic) * 9;
                        for di in 0..3 {
                            let xrow = &x[xbase + di * wd..xbase + di * wd + 3];
                            let wrow = &w[wbase + di * 3..wbase + di * 3 + 3];
                            acc = wrow[0].mul_add(xrow[0], acc);
                            acc = wrow[1].mul_add(xrow[1], acc);
                            acc = wrow[2].mul_add(xrow[2], acc);
                        }
                    }
                    y[((s * co + oc) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
}

pub(crate) fn conv3_backward(
    w: &[f32],
    x: &[f32],
    dy: &[f32],
    n: usize,
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    dw: &mut [f32],
    db: &mut [f32],
    dx: &mut [f32],
) {
    let oh = h - 2;
    let ow = wd - 2;
    dx.fill(0.0);
    for s in 0..n {
        for oc in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let g = dy[((s * co + oc) * oh + i) * ow + j];
                    if g == 0.0 {
                        continue;
                    }
                    db[oc] += g;
                    for ic in 0..ci {
                        let xbase = ((s * ci + ic) * h + i) * wd + j;
                        let wbase = (oc * ci + ic) * 9;
                        for di in 0..3 {
                            for dj in 0..3 {
                                let xi = xbase + di * wd + dj;
                                let wi = wbase + di * 3 + dj;
                                dw[wi] = g.mul_add(x[xi], dw[wi]);
                                dx[xi] = g.mul_add(w[wi], dx[xi]);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn relu_forward(x: &[f32], y: &mut [f32]) {
    for (yo, &xv) in y.iter_mut().zip(x) {
        *yo = if xv > 0.0 { xv } else { 0.0 };
    }
}

pub(crate) fn relu_backward(x: &[f32], dy: &[f32], dx: &mut [f32]) {
    for ((dxo, &xv), &g) in dx.iter_mut().zip(x).zip(dy) {
        *dxo = if xv > 0.0 { g } else { 0.0 };
    }
}

/// 2x2 max pooling, stride 2, trailing odd row/column dropped.
/// Records the flat input index of each maximum for the backward pass.
pub(crate) fn maxpool2_forward(
    x: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    y: &mut [f32],
    argmax: &mut Vec<usize>,
) {
    let oh = h / 2;
    let ow = w / 2;
    argmax.clear();
    argmax.reserve(n * c * oh * ow);
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let i0 = base + (2 * i) * w + 2 * j;
                    let i1 = i0 + 1;
                    let i2 = i0 + w;
                    let i3 = i2 + 1;
                    let mut best = i0;
                    if x[i1] > x[best] {
                        best = i1;
                    }
                    if x[i2] > x[best] {
                        best = i2;
                    }
                    if x[i3] > x[best] {
                        best = i3;
                    }
                    y[((s * c + ch) * oh + i) * ow + j] = x[best];
                    argmax.push(best);
                }
            }
        }
    }
}

pub(crate) fn maxpool2_backward(argmax: &[usize], dy: &[f32], dx: &mut [f32]) {
    dx.fill(0.0);
    for (&idx, &g) in argmax.iter().zip(dy) {
        dx[idx] += g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_identity_map() {
        // x=[1,2], W=I, b=0 -> y=[1,2]
        let w = [1.0, 0.0, 0.0, 1.0];
        let b = [0.0, 0.0];
        let x = [1.0, 2.0];
        let mut y = [0.0f32; 2];
        dense_forward(&w, &b, &x, 1, 2, 2, &mut y);
        assert_eq!(y, [1.0, 2.0]);
    }

    #[test]
    fn maxpool_picks_max_and_routes_gradient() {
        let x = [1.0, 5.0, 3.0, 2.0]; // 2x2 block, max at index 1
        let mut y = [0.0f32; 1];
        let mut arg = Vec::new();
        maxpool2_forward(&x, 1, 1, 2, 2, &mut y, &mut arg);
        assert_eq!(y, [5.0]);
        let mut dx = [9.0f32; 4];
        maxpool2_backward(&arg, &[2.0], &mut dx);
        assert_eq!(dx, [0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn conv3_single_kernel_sums_window() {
        // 3x3 input, all-ones kernel, bias 0 -> single output = sum of input.
        let x: Vec<f32> = (1..=9).map(|v| v as f32).collect();
        let w = vec![1.0f32; 9];
        let b = [0.0];
        let mut y = [0.0f32; 1];
        conv3_forward(&w, &b, &x, 1, 1, 3, 3, 1, &mut y);
        assert_eq!(y[0], 45.0);
    }
}
