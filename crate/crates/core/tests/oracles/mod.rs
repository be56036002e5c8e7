//! Reference implementations that share no code with the library. Each one
//! is written directly from the defining formula, favouring clarity over
//! speed.

#![allow(dead_code, clippy::needless_range_loop)]

/// Row-major dense product by the textbook triple loop.
pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let k = b.len();
    let m = if k == 0 { 0 } else { b[0].len() };
    let mut c = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn naive_transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if a.is_empty() {
        return Vec::new();
    }
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// Singular values of `a` (rows x cols) by one-sided Hestenes-Jacobi
/// rotations applied directly to the columns, sorted descending. Returns
/// `cols` values.
pub fn hestenes_singular_values(a: &[Vec<f64>]) -> Vec<f64> {
    let rows = a.len();
    let cols = if rows == 0 { 0 } else { a[0].len() };
    let mut c: Vec<Vec<f64>> = (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect();
    for _sweep in 0..200 {
        let mut rotated = false;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let alpha: f64 = c[i].iter().map(|x| x * x).sum();
                let beta: f64 = c[j].iter().map(|x| x * x).sum();
                let gamma: f64 = c[i].iter().zip(&c[j]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for r in 0..rows {
                    let (x, y) = (c[i][r], c[j][r]);
                    c[i][r] = cs * x - sn * y;
                    c[j][r] = sn * x + cs * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = c
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s
}

/// Direct 2-D cross-correlation with zero padding.
///
/// `input[c][y][x]`, `weight[o][c][ky][kx]`; returns `out[o][y][x]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    input: &[Vec<Vec<f64>>],
    weight: &[Vec<Vec<Vec<f64>>>],
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Vec<Vec<Vec<f64>>> {
    let ci = input.len();
    let (h, w) = (input[0].len(), input[0][0].len());
    let k = weight[0][0].len();
    let ho = (h + 2 * padding - k) / stride + 1;
    let wo = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![vec![vec![0.0; wo]; ho]; weight.len()];
    for (o, wo_k) in weight.iter().enumerate() {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = bias[o];
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * stride + ky) as isize - padding as isize;
                            let x = (ox * stride + kx) as isize - padding as isize;
                            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                s += wo_k[c][ky][kx] * input[c][y as usize][x as usize];
                            }
                        }
                    }
                }
                out[o][oy][ox] = s;
            }
        }
    }
    out
}

/// Central finite difference of `f` with respect to coordinate `i` of `x`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Relative error with a floor so that two tiny numbers compare as equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Mean softmax cross-entropy of raw logits, computed from the definition.
pub fn cross_entropy(logits: &[Vec<f64>], targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &t) in logits.iter().zip(targets) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    total / logits.len() as f64
}

/// Fewest training errors any threshold rule (either orientation) makes
/// when separating `pos` from `neg` on a scalar feature.
pub fn best_threshold_errors(pos: &[f64], neg: &[f64]) -> usize {
    let mut cuts: Vec<f64> = pos.iter().chain(neg).copied().collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut candidates = vec![f64::NEG_INFINITY, f64::INFINITY];
    for w in cuts.windows(2) {
        candidates.push(0.5 * (w[0] + w[1]));
    }
    let mut best = usize::MAX;
    for &t in &candidates {
        let above_pos = pos.iter().filter(|&&x| x > t).count();
        let above_neg = neg.iter().filter(|&&x| x > t).count();
        // positives above the cut
        let e1 = (pos.len() - above_pos) + above_neg;
        // positives below the cut
        let e2 = above_pos + (neg.len() - above_neg);
        best = best.min(e1).min(e2);
    }
    best
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
