//! Deterministic 2-D PCA projection of pooled feature vectors.
//!
//! Power iteration with deflation on the covariance matrix (no external
//! linear algebra); the test suite checks it against a Jacobi
//! eigendecomposition oracle. Component signs follow a fixed convention:
//! the largest-magnitude loading is made positive.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;

const MAX_ITER: usize = 50_000;
const CONVERGENCE: f64 = 1e-15;

/// 2-D coordinates per input point plus the explained-variance fractions
/// of the two components (non-increasing, in [0, 1]).
#[derive(Debug, Clone)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    pub explained: [f64; 2],
}

/// Projects feature vectors onto their top two principal components.
pub fn project_2d(features: &[Vec<f64>]) -> Result<Projection> {
    if features.len() < 3 {
        return Err(Error::InvalidInput(alloc::format!(
            "need at least 3 points, got {}",
            features.len()
        )));
    }
    let dim = features[0].len();
    if dim < 2 {
        return Err(Error::InvalidInput(
            "need at least 2 feature dimensions".to_string(),
        ));
    }
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch(
            "feature vectors differ in dimension".to_string(),
        ));
    }

    let n = features.len();
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, &v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    // Covariance (unbiased) and its trace, the total variance.
    let mut cov = vec![0.0; dim * dim];
    for row in &centered {
        for i in 0..dim {
            for j in i..dim {
                cov[i * dim + j] += row[i] * row[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / denom;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
    if !(trace > 1e-30) {
        return Err(Error::Undefined(
            "zero total variance: all feature vectors identical".to_string(),
        ));
    }

    let (v1, lambda1) = dominant_eigenvector(&cov, dim)?;
    // Deflate and repeat for the second component.
    let mut deflated = cov.clone();
    for i in 0..dim {
        for j in 0..dim {
            deflated[i * dim + j] -= lambda1 * v1[i] * v1[j];
        }
    }
    let (v2, lambda2) = dominant_eigenvector(&deflated, dim)?;

    let coords = centered
        .iter()
        .map(|row| [math::dot(row, &v1), math::dot(row, &v2)])
        .collect();
    Ok(Projection {
        coords,
        explained: [
            (lambda1 / trace).clamp(0.0, 1.0),
            (lambda2 / trace).clamp(0.0, 1.0),
        ],
    })
}

fn dominant_eigenvector(matrix: &[f64], dim: usize) -> Result<(Vec<f64>, f64)> {
    let mut rng = Rng::derived(0x9CA0, dim as u64);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    normalize(&mut v);
    for _ in 0..MAX_ITER {
        let mut w = vec![0.0; dim];
        for i in 0..dim {
            w[i] = math::dot(&matrix[i * dim..(i + 1) * dim], &v);
        }
        let norm = math::l2_norm(&w);
        if norm < 1e-300 {
            // Zero matrix after deflation: eigenvalue 0, any unit vector.
            fix_sign(&mut v);
            return Ok((v, 0.0));
        }
        // Convergence on the vector itself, not the eigenvalue: the value
        // converges twice as fast and would stop too early.
        let mut delta = 0.0f64;
        for (wv, val) in w.iter_mut().zip(v.iter_mut()) {
            *wv /= norm;
            delta = delta.max((*wv - *val).abs());
            *val = *wv;
        }
        if delta < CONVERGENCE {
            break;
        }
    }
    let mut av = vec![0.0; dim];
    for i in 0..dim {
        av[i] = math::dot(&matrix[i * dim..(i + 1) * dim], &v);
    }
    let lambda = math::dot(&v, &av);
    fix_sign(&mut v);
    Ok((v, lambda.max(0.0)))
}

fn normalize(v: &mut [f64]) {
    let norm = math::l2_norm(v).max(1e-300);
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// Sign convention: the largest-magnitude loading becomes positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}
