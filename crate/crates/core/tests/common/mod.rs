//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `1e-12` times the largest entry.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot = &top[col];
        for (i, row) in rest.iter_mut().enumerate() {
            let f = row[col] / pivot[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                *x -= f * p;
            }
            b[col + 1 + i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimum-norm point of the convex hull by enumerating every subset of at
/// most `p + 1` points, solving the affine least-norm problem on it through
/// the KKT system, and keeping solutions with nonnegative weights.
pub fn brute_force_min_norm(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let p = points[0].len();
    let mut best: Option<Vec<f64>> = None;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if idx.len() > p + 1 {
            continue;
        }
        let m = idx.len();
        let mut a = vec![vec![0.0; m + 1]; m + 1];
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                a[r][c] = dot(&points[i], &points[j]);
            }
            a[r][m] = 1.0;
            a[m][r] = 1.0;
        }
        let mut b = vec![0.0; m + 1];
        b[m] = 1.0;
        let Some(sol) = solve_dense(a, b) else { continue };
        if sol[..m].iter().any(|&mu| mu < -1e-12) {
            continue;
        }
        let mut x = vec![0.0; p];
        for (&i, &mu) in idx.iter().zip(&sol[..m]) {
            for (xj, pj) in x.iter_mut().zip(&points[i]) {
                *xj += mu * pj;
            }
        }
        if best.as_ref().is_none_or(|b| dot(&x, &x) < dot(b, b)) {
            best = Some(x);
        }
    }
    best.expect("single points are always feasible")
}

/// Smallest norm over the barycentric grid with resolution `1 / res`.
pub fn simplex_grid_min_norm(points: &[Vec<f64>], res: usize) -> f64 {
    fn rec(points: &[Vec<f64>], res: usize, i: usize, left: usize, acc: &mut [f64], best: &mut f64) {
        if i == points.len() - 1 {
            let w = left as f64 / res as f64;
            let x: Vec<f64> = acc.iter().zip(&points[i]).map(|(a, p)| a + w * p).collect();
            *best = best.min(x.iter().map(|v| v * v).sum::<f64>().sqrt());
            return;
        }
        for take in 0..=left {
            let w = take as f64 / res as f64;
            let mut next: Vec<f64> = acc.iter().zip(&points[i]).map(|(a, p)| a + w * p).collect();
            rec(points, res, i + 1, left - take, &mut next, best);
        }
    }
    let mut best = f64::INFINITY;
    let mut acc = vec![0.0; points[0].len()];
    rec(points, res, 0, res, &mut acc, &mut best);
    best
}
