use super::tensor::Tensor;
use super::NumericsError;

/// Central-difference estimate `(f(p+h) - f(p-h)) / 2h` for every coordinate
/// of every parameter tensor.
pub fn finite_difference_gradient<F>(
    mut loss: F,
    params: &[Tensor<f64>],
    h: f64,
) -> Result<Vec<Tensor<f64>>, NumericsError>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64, NumericsError>,
{
    if !(h > 0.0) {
        return Err(NumericsError::InvalidStep(h));
    }
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = Tensor::zeros(params[pi].shape());
        for ci in 0..params[pi].len() {
            let orig = params[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let plus = loss(&work)?;
            work[pi].data_mut()[ci] = orig - h;
            let minus = loss(&work)?;
            work[pi].data_mut()[ci] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumericsError::NonFiniteLoss { param: pi, coord: ci });
            }
            grad.data_mut()[ci] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)` over all coordinates.
pub fn max_relative_error(a: &[Tensor<f64>], b: &[Tensor<f64>], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = [Tensor::scalar(3.0)];
        let g = finite_difference_gradient(|w| Ok(w[0].item()? * w[0].item()?), &p, 1e-5).unwrap();
        assert!((g[0].item().unwrap() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn sine_at_zero() {
        let p = [Tensor::scalar(0.0)];
        let g = finite_difference_gradient(|w| Ok(w[0].item()?.sin()), &p, 1e-5).unwrap();
        assert!((g[0].item().unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        let p = [Tensor::scalar(0.0)];
        assert!(matches!(
            finite_difference_gradient(|_| Ok(0.0), &p, 0.0),
            Err(NumericsError::InvalidStep(_))
        ));
        assert!(matches!(
            finite_difference_gradient(|w| Ok(1.0 / w[0].item()?.abs().max(0.0) - 1e308 * 1e10), &p, 1e-5),
            Err(NumericsError::NonFiniteLoss { .. })
        ));
    }
}
