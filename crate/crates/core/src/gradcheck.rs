//! Central finite differences, used as an oracle for [`Tensor::backward`].

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Default pass threshold on the maximum relative error.
pub const GRAD_TOL: f64 = 1e-4;

/// Floor on the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate of `x`.
///
/// `f` is evaluated on a fresh graph each time with `x` as a constant leaf,
/// so nothing in the reverse pass participates.
pub fn finite_diff_gradient<T, F>(mut f: F, x: &[T], shape: &[usize], h: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    if h <= T::zero() {
        return Err(Error::Invalid(
            "finite-difference step must be positive".into(),
        ));
    }
    let mut eval = |point: &[T]| -> Result<T> {
        let g = Graph::new();
        let leaf = g.constant(shape.to_vec(), point.to_vec())?;
        let v = f(&leaf)?.item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_gradient",
            });
        }
        Ok(v)
    };
    let mut point = x.to_vec();
    let two_h = h + h;
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        point[i] = x[i] + h;
        let up = eval(&point)?;
        point[i] = x[i] - h;
        let down = eval(&point)?;
        point[i] = x[i];
        grad.push((up - down) / two_h);
    }
    Ok(grad)
}

/// Value and reverse-mode gradient of `f` at `x`.
pub fn autodiff_gradient<T, F>(mut f: F, x: &[T], shape: &[usize]) -> Result<(T, Vec<T>)>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    let g = Graph::new();
    let leaf = g.param(shape.to_vec(), x.to_vec())?;
    let out = f(&leaf)?;
    let value = out.item()?;
    let grads = out.backward()?;
    let grad = grads
        .get(&leaf)
        .map(<[T]>::to_vec)
        .unwrap_or_else(|| vec![T::zero(); x.len()]);
    Ok((value, grad))
}

/// Element-wise `|a - b| / max(|a|, |b|, floor)`, maximized over elements.
pub fn max_relative_error<T: Scalar>(a: &[T], b: &[T], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x.as_f64(), y.as_f64());
            (x - y).abs() / x.abs().max(y.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

/// Outcome of comparing reverse-mode against finite differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub value: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Runs both routes at `x` and reports the maximum relative error.
pub fn check_gradient<T, F>(mut f: F, x: &[T], shape: &[usize], h: T) -> Result<GradCheck>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    let (value, analytic) = autodiff_gradient(&mut f, x, shape)?;
    let numeric = finite_diff_gradient(&mut f, x, shape, h)?;
    let max_rel_err = max_relative_error(&analytic, &numeric, REL_FLOOR);
    Ok(GradCheck {
        value: value.as_f64(),
        analytic: analytic.into_iter().map(Scalar::as_f64).collect(),
        numeric: numeric.into_iter().map(Scalar::as_f64).collect(),
        max_rel_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_gradient(|x| x.pow2()?.sum(), &[3.0f64], &[1], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() <= 1e-6);
    }

    #[test]
    fn exp_at_zero() {
        let g = finite_diff_gradient(|x| x.exp()?.sum(), &[0.0f64], &[1], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        assert!(finite_diff_gradient(|x| x.sum(), &[1.0], &[1], 0.0).is_err());
        let r = finite_diff_gradient(|x| x.mul_scalar(800.0)?.exp()?.sum(), &[1.0], &[1], 1e-5);
        assert!(r.is_err());
    }

    #[test]
    fn tanh_gradient_matches() {
        let c = check_gradient(|x| x.tanh()?.sum(), &[0.3, -1.1], &[2], 1e-5).unwrap();
        assert!(c.passes(1e-6), "{c:?}");
    }

    #[test]
    fn wrong_derivative_is_detected() {
        fn sin(x: f64) -> f64 {
            x.sin()
        }
        fn wrong(x: f64) -> f64 {
            -x.cos()
        }
        let c = check_gradient(|x| x.map(sin, wrong)?.sum(), &[0.4, 1.2], &[2], 1e-5).unwrap();
        assert!(!c.passes(GRAD_TOL));
    }
}
