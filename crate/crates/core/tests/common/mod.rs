//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Cyclic coordinate descent for `min ½‖Z x − q‖² + λ‖x‖₁`.
pub fn cd_lasso(z: ArrayView2<'_, f64>, q: ArrayView1<'_, f64>, lambda: f64) -> Array1<f64> {
    let n = z.ncols();
    let mut x = Array1::<f64>::zeros(n);
    let mut r = q.to_owned();
    let norms: Vec<f64> = (0..n).map(|j| z.column(j).dot(&z.column(j))).collect();
    for _ in 0..200_000 {
        let mut change = 0.0f64;
        for j in 0..n {
            if norms[j] == 0.0 {
                continue;
            }
            let zj = z.column(j);
            let rho = zj.dot(&r) + norms[j] * x[j];
            let new = soft(rho, lambda) / norms[j];
            let d = new - x[j];
            if d != 0.0 {
                r.scaled_add(-d, &zj);
                x[j] = new;
                change = change.max(d.abs());
            }
        }
        if change < 1e-15 {
            break;
        }
    }
    x
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub fn lasso_objective(z: ArrayView2<'_, f64>, q: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>, lambda: f64) -> f64 {
    let r = z.dot(&x) - q;
    0.5 * r.dot(&r) + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
}

/// `α(VᵀV + αI)⁻¹` through nalgebra's general LU inverse.
pub fn direct_projector(v: ArrayView2<'_, f64>, alpha: f64) -> Array2<f64> {
    let s = v.ncols();
    let m = nalgebra::DMatrix::from_fn(v.nrows(), s, |i, j| v[[i, j]]);
    let g = m.transpose() * &m + nalgebra::DMatrix::identity(s, s) * alpha;
    let inv = g.try_inverse().expect("regularized Gram matrix is invertible");
    Array2::from_shape_fn((s, s), |(i, j)| alpha * inv[(i, j)])
}

/// Eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(a: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = a.nrows();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    m.symmetric_eigen().eigenvalues.iter().copied().collect()
}

pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Directory holding `mnist/` and `fashion-mnist/`.
pub fn data_root() -> PathBuf {
    match std::env::var_os("IF2NET_DATA_DIR") {
        Some(d) => PathBuf::from(d),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

/// The named IDX dataset directory if its training images are present.
pub fn idx_dir(name: &str) -> Option<PathBuf> {
    let dir = data_root().join(name);
    dir.join("train-images-idx3-ubyte.gz").exists().then_some(dir)
}
