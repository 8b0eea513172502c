//! Small dense helpers shared by the key and model code.

use nalgebra::DMatrix;

/// Max-abs entry of a matrix (the `‖·‖∞` used by the key invariants).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// `‖A − I‖` in the max-abs sense. `a` must be square.
pub fn max_abs_from_identity(a: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.nrows(), a.ncols());
    let mut worst = 0.0_f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((a[(i, j)] - target).abs());
        }
    }
    worst
}

/// `y = A·x` for a column-major `A`, written into `y`.
pub fn matvec_into(a: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(a.ncols(), x.len());
    debug_assert_eq!(a.nrows(), y.len());
    y.fill(0.0);
    let rows = a.nrows();
    let data = a.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = &data[j * rows..(j + 1) * rows];
        for (yi, &aij) in y.iter_mut().zip(col) {
            *yi += aij * xj;
        }
    }
}

/// `y += alpha·A·x`.
pub fn matvec_axpy(a: &DMatrix<f64>, alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(a.ncols(), x.len());
    debug_assert_eq!(a.nrows(), y.len());
    let rows = a.nrows();
    let data = a.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        let s = alpha * xj;
        if s == 0.0 {
            continue;
        }
        let col = &data[j * rows..(j + 1) * rows];
        for (yi, &aij) in y.iter_mut().zip(col) {
            *yi += aij * s;
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖₂`. Panics on length mismatch.
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Relative parameter error `‖reference − other‖₂ / (1 + ‖reference‖₂)`.
pub fn relative_error(reference: &[f64], other: &[f64]) -> f64 {
    l2_distance(reference, other) / (1.0 + l2_norm(reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_matches_nalgebra() {
        let a = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.0);
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut y = [0.0; 3];
        matvec_into(&a, &x, &mut y);
        let expect = &a * nalgebra::DVector::from_column_slice(&x);
        assert_eq!(&y[..], expect.as_slice());

        let mut z = [1.0; 3];
        matvec_axpy(&a, -0.5, &x, &mut z);
        for i in 0..3 {
            assert!((z[i] - (1.0 - 0.5 * expect[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_error_of_identical_vectors_is_zero() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(relative_error(&v, &v), 0.0);
        assert!((relative_error(&[0.0], &[2.0]) - 2.0).abs() < 1e-15);
    }
}
