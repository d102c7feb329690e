//! Sample mean and standard error.

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Sample standard deviation (`n - 1` denominator) over `sqrt(n)`; needs at
/// least two values.
pub fn standard_error(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    Some((var / xs.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_values() {
        assert_eq!(mean(&[0.4, 0.6]), Some(0.5));
        assert!((standard_error(&[0.4, 0.6]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(standard_error(&[1.0, 3.0]), Some(1.0));
        assert_eq!(standard_error(&[2.5; 6]), Some(0.0));
        assert_eq!(standard_error(&[1.0]), None);
        assert_eq!(mean(&[]), None);
    }
}
