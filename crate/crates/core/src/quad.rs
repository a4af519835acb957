//! Trapezoid quadrature on uniform grids.

/// Composite trapezoid weights for `n` nodes with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let mut w = vec![h; n];
            w[0] = 0.5 * h;
            w[n - 1] = 0.5 * h;
            w
        }
    }
}

pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Trapezoid-weighted inner product.
pub fn inner(a: &[f64], b: &[f64], h: f64) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = (1..n - 1).map(|i| a[i] * b[i]).sum();
    h * (inner + 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]))
}

pub fn l2_norm(values: &[f64], h: f64) -> f64 {
    inner(values, values, h).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_linear_functions_exactly() {
        let n = 11;
        let h = 0.1;
        let v: Vec<f64> = (0..n).map(|i| 2.0 + 3.0 * i as f64 * h).collect();
        assert!((trapezoid(&v, h) - 3.5).abs() < 1e-14);
        let w = trapezoid_weights(n, h);
        let s: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((s - 3.5).abs() < 1e-14);
    }

    #[test]
    fn degenerate_lengths() {
        assert_eq!(trapezoid(&[], 0.1), 0.0);
        assert_eq!(trapezoid(&[3.0], 0.1), 0.0);
        assert_eq!(trapezoid_weights(1, 0.1), vec![0.0]);
    }
}
