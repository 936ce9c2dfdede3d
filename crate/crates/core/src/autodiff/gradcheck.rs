use crate::autodiff::params::{Gradients, ModelParams};
use crate::autodiff::tape::{Tape, Var};
use crate::error::Result;

/// Relative errors below this magnitude floor are measured absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Compares tape gradients of the scalar built by `f` with central
/// differences of step `h` on every parameter coordinate.
pub fn grad_check<F>(params: &ModelParams, h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let eval = |p: &ModelParams| -> Result<f64> {
        let mut tape = Tape::with_params(p);
        let loss = f(&mut tape)?;
        Ok(tape.scalar(loss))
    };
    let mut grads = Gradients::zeros_like(params);
    {
        let mut tape = Tape::with_params(params);
        let loss = f(&mut tape)?;
        tape.backward(loss, &mut grads)?;
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, coordinates: 0 };
    for (id, name, value) in params.iter() {
        for j in 0..value.len() {
            let x = value.data()[j];
            probe.get_mut(id).data_mut()[j] = x + h;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = x - h;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grads.get(id).data()[j], numeric);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.to_string(), j));
            }
        }
    }
    Ok(report)
}
