use super::{NumError, Tensor};

/// Compares analytic gradients against central finite differences.
///
/// `f` maps a parameter list to `(value, gradients)`; gradients must have the
/// same shapes as the parameters. Returns
/// `max_i |g_analytic,i − g_fd,i| / max(1, |g_fd,i|)` over every coordinate.
pub fn grad_check<F>(mut f: F, params: &[Tensor], h: f64) -> Result<f64, NumError>
where
    F: FnMut(&[Tensor]) -> Result<(f64, Vec<Tensor>), NumError>,
{
    let (_, analytic) = f(params)?;
    if analytic.len() != params.len() {
        return Err(NumError::Arity {
            op: "grad_check",
            expected: params.len(),
            got: analytic.len(),
        });
    }
    let mut probe: Vec<Tensor> = params.to_vec();
    let mut worst: f64 = 0.0;
    for (p, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[p].shape() {
            return Err(NumError::ShapeMismatch {
                op: "grad_check",
                left: params[p].shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        for i in 0..params[p].len() {
            let original = params[p].data()[i];
            probe[p].data_mut()[i] = original + h;
            let (plus, _) = f(&probe)?;
            probe[p].data_mut()[i] = original - h;
            let (minus, _) = f(&probe)?;
            probe[p].data_mut()[i] = original;
            let fd = (plus - minus) / (2.0 * h);
            let err = (grad.data()[i] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form() {
        // f(x) = xᵀAx with symmetric A; ∇f = 2Ax
        let a = [[2.0, 0.5, -1.0], [0.5, 3.0, 0.25], [-1.0, 0.25, 1.5]];
        let f = |ps: &[Tensor]| {
            let x = ps[0].data();
            let mut value = 0.0;
            let mut grad = vec![0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    value += x[i] * a[i][j] * x[j];
                    grad[i] += 2.0 * a[i][j] * x[j];
                }
            }
            Ok((value, vec![Tensor::vector(grad)]))
        };
        let err = grad_check(f, &[Tensor::vector(vec![0.3, -1.2, 2.0])], 1e-5).unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |ps: &[Tensor]| {
            let x = ps[0].data()[0];
            Ok((x * x, vec![Tensor::vector(vec![x])]))
        };
        let err = grad_check(f, &[Tensor::vector(vec![2.0])], 1e-5).unwrap();
        assert!(err > 0.5);
    }
}
