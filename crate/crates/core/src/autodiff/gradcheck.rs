use super::{AutodiffError, AutodiffResult, Tape, Tensor, Var};

/// Compares reverse-mode gradients against central differences.
///
/// `function` receives one parameter leaf per tensor in `point` and must
/// return a scalar. The result is the maximum over all coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(function: F, point: &[Tensor], h: f64) -> AutodiffResult<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> AutodiffResult<Var<'t>>,
{
    if !(h > 0.0) {
        return Err(AutodiffError::ShapeMismatch("step h must be positive".into()));
    }
    let evaluate = |values: &[Tensor]| -> AutodiffResult<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|v| tape.parameter(v.clone())).collect();
        let out = function(&tape, &vars)?;
        let value = out.item();
        if !value.is_finite() {
            return Err(AutodiffError::NonFiniteValue("forward evaluation".into()));
        }
        Ok(value)
    };

    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = point.iter().map(|v| tape.parameter(v.clone())).collect();
        let out = function(&tape, &vars)?;
        if !out.item().is_finite() {
            return Err(AutodiffError::NonFiniteValue("forward evaluation".into()));
        }
        let grads = tape.backward(&out)?;
        vars.iter()
            .map(|v| grads.get(v).expect("parameter leaf").to_vec())
            .collect()
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = point.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..point[t].len() {
            let x0 = point[t].data()[i];
            work[t].data_mut()[i] = x0 + h;
            let up = evaluate(&work)?;
            work[t].data_mut()[i] = x0 - h;
            let down = evaluate(&work)?;
            work[t].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * h);
            let err = (grad[i] - numeric).abs() / numeric.abs().max(1.0);
            if !err.is_finite() {
                return Err(AutodiffError::NonFiniteValue("gradient".into()));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn quadratic_is_near_exact() {
        let mut rng = crate::rng::rng(11);
        let x = Tensor::new(vec![6], (0..6).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let err = grad_check(|_, v| v[0].square()?.sum(), &[x], 1e-5).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn sqrt_at_zero_is_finite() {
        // the analytic side is floored to zero; only finiteness is promised
        let tape = Tape::new();
        let x = tape.parameter(Tensor::scalar(0.0));
        let y = x.sqrt().unwrap();
        let g = tape.backward(&y).unwrap();
        assert!(g.get(&x).unwrap()[0].is_finite());
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let x = Tensor::scalar(1.0);
        let err = grad_check(|_, v| v[0].scale(f64::INFINITY)?.sum(), &[x], 1e-5).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFiniteValue(_)));
    }

    #[test]
    fn two_layer_sine_network() {
        let mut rng = crate::rng::rng(21);
        let mut rand = |r: usize, c: usize| {
            Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let x = rand(6, 3);
        let point = vec![rand(3, 8), rand(1, 8), rand(8, 3), rand(1, 3)];
        let err = grad_check(
            |tape, p| {
                let input = tape.constant(x.clone());
                let h = input.matmul(&p[0])?.bias_add(&p[1])?.scale(2.0)?.sin()?;
                h.matmul(&p[2])?.bias_add(&p[3])?.mean()
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
