//! Small dense linear-algebra helpers shared by the recovery and environment code.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Thin SVD with singular values sorted in descending order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v_t = DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
    let singular_values = order.iter().map(|&i| s[i]).collect();
    SortedSvd {
        u,
        singular_values,
        v_t,
    }
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().sum()
}

/// Frobenius inner product `Tr(AᵀB)`.
pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// A point drawn uniformly from the unit sphere `S^{d-1}` by normalizing a
/// Gaussian vector; the (probability zero) all-zero draw is redrawn.
pub fn sample_unit_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            return g / norm;
        }
    }
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// All points `step * j` (j integer vector) of the cubic lattice inside the
/// closed ball of the given radius, in lexicographic order of `j`.
pub fn ball_lattice(k: usize, radius: f64, step: f64) -> Vec<DVector<f64>> {
    let half = (radius / step + 1e-9).floor() as i64;
    let r2 = radius * radius * (1.0 + 1e-12);
    let mut out = Vec::new();
    let mut idx = vec![-half; k];
    if k == 0 {
        return vec![DVector::zeros(0)];
    }
    loop {
        let p = DVector::from_iterator(k, idx.iter().map(|&j| j as f64 * step));
        if p.norm_squared() <= r2 {
            out.push(p);
        }
        // odometer increment, last coordinate fastest
        let mut pos = k;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            if idx[pos] < half {
                idx[pos] += 1;
                for slot in idx.iter_mut().skip(pos + 1) {
                    *slot = -half;
                }
                break;
            }
        }
    }
}

/// Number of lattice candidates per axis before filtering to the ball.
pub fn lattice_axis_count(radius: f64, step: f64) -> usize {
    2 * (radius / step + 1e-9).floor() as usize + 1
}

/// Maximize `f` over the closed ball `B_k(radius)`: exhaustive lattice search
/// at `resolution`, optionally followed by a projected pattern search that
/// only ever accepts improvements.
pub fn maximize_over_ball<F>(f: F, k: usize, radius: f64, resolution: f64, refine: bool) -> (f64, DVector<f64>)
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut best = DVector::zeros(k);
    let mut best_val = f(&best);
    for p in ball_lattice(k, radius, resolution) {
        let v = f(&p);
        if v > best_val {
            best_val = v;
            best = p;
        }
    }
    if !refine {
        return (best_val, best);
    }

    let project = |mut p: DVector<f64>| {
        let n = p.norm();
        if n > radius {
            p *= radius / n;
        }
        p
    };
    let mut step = resolution;
    while step > 1e-13 {
        let mut improved = false;
        for axis in 0..k {
            for sign in [1.0, -1.0] {
                let mut cand = best.clone();
                cand[axis] += sign * step;
                let cand = project(cand);
                let v = f(&cand);
                if v > best_val {
                    best_val = v;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best_val, best)
}
