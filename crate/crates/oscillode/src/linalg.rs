//! Small dense-vector helpers shared across modules. Experiments use d = 2
//! but nothing here assumes it.

use crate::error::{Error, Result};

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| s * x).collect()
}

/// a + s*b
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Solve A x = b by Gaussian elimination with partial pivoting.
/// `a` is row-major d x d; rejects pivots below 1e-12.
pub fn solve(a: &[f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), d * d);
    debug_assert_eq!(b.len(), d);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..d {
        let (pivot_row, pivot) = (col..d)
            .map(|r| (r, m[r * d + col].abs()))
            .max_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        if pivot < 1e-12 {
            return Err(Error::SingularMatrix { pivot });
        }
        if pivot_row != col {
            for j in 0..d {
                m.swap(col * d + j, pivot_row * d + j);
            }
            x.swap(col, pivot_row);
        }
        for r in col + 1..d {
            let factor = m[r * d + col] / m[col * d + col];
            for j in col..d {
                m[r * d + j] -= factor * m[col * d + j];
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..d).rev() {
        let mut s = x[col];
        for j in col + 1..d {
            s -= m[col * d + j] * x[j];
        }
        x[col] = s / m[col * d + col];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_2x2() {
        let a = [2.0, 1.0, 1.0, 3.0];
        let b = [5.0, 10.0];
        let x = solve(&a, &b, 2).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn solve_needs_pivoting() {
        let a = [0.0, 1.0, 1.0, 0.0];
        let b = [2.0, 3.0];
        let x = solve(&a, &b, 2).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn solve_singular_rejected() {
        let a = [1.0, 2.0, 2.0, 4.0];
        let b = [1.0, 2.0];
        assert!(matches!(
            solve(&a, &b, 2),
            Err(Error::SingularMatrix { .. })
        ));
    }
}
