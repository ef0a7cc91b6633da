//! One-sided Jacobi (Hestenes) singular values for small dense matrices.

use nalgebra::DMatrix;

const MAX_SWEEPS: usize = 80;

/// Singular values of `a`, non-increasing. Returns `min(rows, cols)` values.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    // Orthogonalize the columns of whichever orientation has fewer of them.
    let (rows, cols) = a.shape();
    let mut columns: Vec<Vec<f64>> = if rows >= cols {
        (0..cols).map(|j| a.column(j).iter().copied().collect()).collect()
    } else {
        (0..rows).map(|i| a.row(i).iter().copied().collect()).collect()
    };
    orthogonalize(&mut columns);
    let mut values: Vec<f64> = columns.iter().map(|c| norm(c)).collect();
    values.sort_by(|x, y| y.total_cmp(x));
    values
}

fn orthogonalize(columns: &mut [Vec<f64>]) {
    let n = columns.len();
    let tol = f64::EPSILON * (columns.first().map_or(1, |c| c.len()) as f64).sqrt();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&columns[p], &columns[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = columns.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xv, yv) = (*x, *y);
                    *x = c * xv - s * yv;
                    *y = s * xv + c * yv;
                }
            }
        }
        if !rotated {
            return;
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_matrix() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -5.0, 0.5]));
        let s = singular_values(&a);
        assert_eq!(s.len(), 3);
        for (x, y) in s.iter().zip([5.0, 3.0, 0.5]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_one_outer_product() {
        let u = nalgebra::DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let v = nalgebra::DVector::from_vec(vec![0.0, 3.0, 4.0, 0.0]);
        let s = singular_values(&(&u * v.transpose()));
        assert!((s[0] - 15.0).abs() < 1e-13);
        assert!(s[1..].iter().all(|x| x.abs() < 1e-13));
    }

    #[test]
    fn matches_nalgebra_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (r, c) in [(7, 3), (3, 7), (20, 20), (1, 5)] {
            let a = DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
            let ours = singular_values(&a);
            let mut theirs: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
            theirs.sort_by(|x, y| y.total_cmp(x));
            for (x, y) in ours.iter().zip(&theirs) {
                assert!((x - y).abs() < 1e-12 * theirs[0], "{x} vs {y}");
            }
        }
    }
}
