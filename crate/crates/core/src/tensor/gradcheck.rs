//! Central finite-difference oracle for the tape.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst `|a − n| / max(1e-8, |a| + |n|)` over the checked coordinates.
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error used by every gradient check in the crate.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-8, a.abs() + b.abs())
}

/// Checks every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(f, x, eps, &coords)
}

/// Checks the listed flat coordinates of `x` against central differences
/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps`.
pub fn grad_check_coords<F>(mut f: F, x: &Tensor<f64>, eps: f64, coords: &[usize]) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            tape.shape(out)
        )));
    }
    let grads = tape.backward(out)?;
    let zeros = Tensor::zeros(x.shape().to_vec());
    let analytic = grads.get(xv).unwrap_or(&zeros);

    let mut eval = |probe: &Tensor<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(probe.clone());
        let o = f(&mut t, v)?;
        Ok(t.value(o).data()[0])
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, checked: 0 };
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_exact_unit_gradient() {
        let x = Tensor::from_fn(vec![3, 4], |i| i as f64 * 0.3 - 1.0);
        let r = grad_check(|t, v| Ok(t.sum_all(v)), &x, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 12);
    }

    #[test]
    fn non_scalar_function_is_rejected() {
        let x = Tensor::from_fn(vec![2, 2], |i| i as f64);
        let err = grad_check(|t, v| Ok(t.square(v)), &x, 1e-5).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
