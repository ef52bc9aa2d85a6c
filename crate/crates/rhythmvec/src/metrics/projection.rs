//! Deterministic 2-D principal-component projection of embedding sets.
//!
//! Centered data is projected onto the top-2 eigenvectors of the covariance
//! matrix (population divisor n). Signs are fixed by making the
//! largest-magnitude loading of each direction positive, so identical inputs
//! always produce identical plots.

use crate::error::{Error, Result};
use crate::nn::Mat;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvectors as columns).
fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let d = a.rows();
    assert_eq!(d, a.cols(), "jacobi needs a square matrix");
    let mut m = a.clone();
    let mut v = Mat::zeros(d, d);
    for i in 0..d {
        *v.at_mut(i, i) = 1.0;
    }

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += m.at(p, q) * m.at(p, q);
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for i in 0..d {
                    let mip = m.at(i, p);
                    let miq = m.at(i, q);
                    *m.at_mut(i, p) = c * mip - s * miq;
                    *m.at_mut(i, q) = s * mip + c * miq;
                }
                for i in 0..d {
                    let mpi = m.at(p, i);
                    let mqi = m.at(q, i);
                    *m.at_mut(p, i) = c * mpi - s * mqi;
                    *m.at_mut(q, i) = s * mpi + c * mqi;
                }
                for i in 0..d {
                    let vip = v.at(i, p);
                    let viq = v.at(i, q);
                    *v.at_mut(i, p) = c * vip - s * viq;
                    *v.at_mut(i, q) = s * vip + c * viq;
                }
            }
        }
    }
    let eigenvalues = (0..d).map(|i| m.at(i, i)).collect();
    (eigenvalues, v)
}

/// Project embeddings onto their top-2 principal directions.
pub fn project_embeddings_2d<E: AsRef<[f64]>>(embeddings: &[E]) -> Result<Vec<(f64, f64)>> {
    if embeddings.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "2-D projection needs at least 3 embeddings, got {}",
            embeddings.len()
        )));
    }
    let d = embeddings[0].as_ref().len();
    if d < 2 {
        return Err(Error::InvalidInput("embeddings must have dimension >= 2".into()));
    }
    if embeddings.iter().any(|e| e.as_ref().len() != d) {
        return Err(Error::Shape("embeddings of mixed dimensions".into()));
    }
    let n = embeddings.len();

    let mut mean = vec![0.0; d];
    for e in embeddings {
        for (m, &x) in mean.iter_mut().zip(e.as_ref()) {
            *m += x / n as f64;
        }
    }
    let mut centered = Mat::zeros(n, d);
    for (i, e) in embeddings.iter().enumerate() {
        for (j, &x) in e.as_ref().iter().enumerate() {
            *centered.at_mut(i, j) = x - mean[j];
        }
    }

    let mut cov = Mat::zeros(d, d);
    for i in 0..n {
        let row = centered.row(i);
        for a in 0..d {
            for b in 0..d {
                *cov.at_mut(a, b) += row[a] * row[b] / n as f64;
            }
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    // Descending eigenvalue; ties resolved by index for determinism.
    order.sort_by(|&a, &b| {
        eigenvalues[b]
            .partial_cmp(&eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });

    let mut axes = Vec::with_capacity(2);
    for &col in order.iter().take(2) {
        let mut axis: Vec<f64> = (0..d).map(|r| vectors.at(r, col)).collect();
        // Sign convention: largest-magnitude loading positive.
        let lead = axis
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.abs()
                    .partial_cmp(&b.abs())
                    .expect("finite loadings")
                    .then(ib.cmp(ia))
            })
            .map(|(i, _)| i)
            .expect("nonempty axis");
        if axis[lead] < 0.0 {
            for x in axis.iter_mut() {
                *x = -*x;
            }
        }
        axes.push(axis);
    }

    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let x: f64 = row.iter().zip(&axes[0]).map(|(a, b)| a * b).sum();
            let y: f64 = row.iter().zip(&axes[1]).map(|(a, b)| a * b).sum();
            (x, y)
        })
        .collect())
}
