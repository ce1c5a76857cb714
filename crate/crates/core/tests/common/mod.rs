//! Independent reference computations for the integration tests.
//!
//! Nothing here calls the library's solver or certifier: minima come from
//! grid searches and margins from exhaustive subset enumeration.

#![allow(dead_code)]

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Reference cost values, written out from the definitions.
pub fn cost_value(kind: &str, lambda: f64, v: &[f64]) -> f64 {
    match kind {
        "squared_l2" => v.iter().map(|x| x * x).sum(),
        "l1" => v.iter().map(|x| x.abs()).sum(),
        "l2norm" => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        "lasso_envelope" => v.iter().map(|&s| envelope_by_grid(s, lambda)).sum(),
        other => panic!("unknown cost {other}"),
    }
}

/// `min_a (s - a)^2 + lambda |a|` by scanning `a` over `[-10, 10]` with step 1e-4.
pub fn envelope_by_grid(s: f64, lambda: f64) -> f64 {
    let steps = 200_000;
    (0..=steps)
        .map(|k| -10.0 + 20.0 * k as f64 / steps as f64)
        .map(|a| (s - a).powi(2) + lambda * a.abs())
        .fold(f64::INFINITY, f64::min)
}

/// Grid minimum of `f` on `[lo, hi]` with the given step.
pub fn grid_min_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> (f64, f64) {
    let n = ((hi - lo) / step).ceil() as usize;
    let mut best = (lo, f(lo));
    for k in 1..=n {
        let x = (lo + k as f64 * step).min(hi);
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Convex 1-D minimization: a coarse scan, then a step-`fine` scan around the
/// coarse winner. Returns the grid point, its value, and a lower bound on
/// the true minimum obtained from the secant slopes next to the grid point.
pub fn convex_grid_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, fine: f64) -> (f64, f64, f64) {
    let coarse = (hi - lo) / 2_000.0;
    let (xc, _) = grid_min_1d(&f, lo, hi, coarse);
    let (x, fx) = grid_min_1d(&f, (xc - coarse).max(lo), (xc + coarse).min(hi), fine);
    let left = (fx - f(x - fine)) / fine;
    let right = (f(x + fine) - fx) / fine;
    let lower = fx - (-left).max(right).max(0.0) * fine;
    (x, fx, lower)
}

/// Repeated zooming grid search for a convex function of one variable.
pub fn nested_grid_1d(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > 1e-10 * (1.0 + lo.abs().max(hi.abs())) {
        let step = (hi - lo) / 200.0;
        let (x, _) = grid_min_1d(&f, lo, hi, step);
        lo = x - 2.0 * step;
        hi = x + 2.0 * step;
    }
    0.5 * (lo + hi)
}

/// Repeated zooming grid search on a square, for convex functions of two variables.
pub fn nested_grid_2d(f: impl Fn(f64, f64) -> f64, lo: f64, hi: f64, rounds: usize) -> ((f64, f64), f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (lo, hi, lo, hi);
    let mut best = ((lo, lo), f64::INFINITY);
    for _ in 0..rounds {
        let k = 120;
        let (sx, sy) = ((x1 - x0) / k as f64, (y1 - y0) / k as f64);
        for i in 0..=k {
            for j in 0..=k {
                let (x, y) = (x0 + i as f64 * sx, y0 + j as f64 * sy);
                let v = f(x, y);
                if v < best.1 {
                    best = ((x, y), v);
                }
            }
        }
        let ((bx, by), _) = best;
        x0 = bx - 3.0 * sx;
        x1 = bx + 3.0 * sx;
        y0 = by - 3.0 * sy;
        y1 = by + 3.0 * sy;
    }
    best
}

/// All `p`-subsets of `0..m`, by recursion.
pub fn subsets(m: usize, p: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, m: usize, p: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == p {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            if m - i < p - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, m, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, m, p, &mut Vec::new(), &mut out);
    out
}

/// `min over |I| = p of sum_{i not in I} g_i - sum_{i in I} g_i`, by enumeration.
pub fn brute_margin(gains: &[f64], p: usize) -> f64 {
    let total: f64 = gains.iter().sum();
    subsets(gains.len(), p)
        .iter()
        .map(|s| total - 2.0 * s.iter().map(|&i| gains[i]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}
