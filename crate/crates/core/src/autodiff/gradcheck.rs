use super::{AutodiffError, Tape, Tensor, Var};

/// Compare reverse-mode gradients of a scalar function against central
/// finite differences.
///
/// Returns `max |analytic - numeric| / max(1, |numeric|)` over every element
/// of every parameter tensor in `point`.
pub fn grad_check<E, F>(f: F, point: &[Tensor], step: f64) -> Result<f64, E>
where
    E: From<AutodiffError>,
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, E>,
{
    if !(step > 0.0) {
        return Err(AutodiffError::Invalid(format!("finite-difference step {step} must be > 0")).into());
    }
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = point.iter().map(|t| tape.param(t)).collect();
        let out = f(&tape, &vars)?;
        let v = out.item();
        if !v.is_finite() {
            return Err(AutodiffError::NonFinite {
                param: 0,
                index: 0,
                value: v,
            }
            .into());
        }
        tape.backward(out)?;
        vars.iter()
            .map(|v| v.grad().expect("parameter gradient"))
            .collect()
    };

    let eval = |probe: &[Tensor], param: usize, index: usize| -> Result<f64, E> {
        let tape = Tape::inference();
        let vars: Vec<Var<'_>> = probe.iter().map(|t| tape.param(t)).collect();
        let v = f(&tape, &vars)?.item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(AutodiffError::NonFinite {
                param,
                index,
                value: v,
            }
            .into())
        }
    };

    let mut probe = point.to_vec();
    let mut worst: f64 = 0.0;
    for p in 0..point.len() {
        for i in 0..point[p].numel() {
            let x0 = point[p].data()[i];
            probe[p].data_mut()[i] = x0 + step;
            let plus = eval(&probe, p, i)?;
            probe[p].data_mut()[i] = x0 - step;
            let minus = eval(&probe, p, i)?;
            probe[p].data_mut()[i] = x0;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic[p].data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
