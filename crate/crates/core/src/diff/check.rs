use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest `|analytic − numeric| / max(1, |analytic|)` over all coordinates
/// of `x`, with central differences of step `eps`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_coords(f, x, eps, None)
}

/// As [`grad_check`], restricted to the listed flat coordinates.
pub fn grad_check_coords<F>(f: F, x: &Tensor, eps: f64, coords: Option<&[usize]>) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone());
        let out = f(&mut tape, v)?;
        let y = tape.value(out).item();
        if !y.is_finite() {
            return Err(Error::NonFinite("grad_check objective"));
        }
        Ok(y)
    };
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    if !tape.value(out).item().is_finite() {
        return Err(Error::NonFinite("grad_check objective"));
    }
    tape.backward(out)?;
    let analytic = tape
        .grad(v)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for &i in coords {
        let x0 = probe.data()[i];
        probe.data_mut()[i] = x0 + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = x0 - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = x0;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
