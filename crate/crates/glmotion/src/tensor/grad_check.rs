//! Central finite-difference verification for analytic gradients.

use super::{Tape, TensorError, TensorId};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tol: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1e-6);
    (a - n).abs() / denom
}

/// Compares the analytic gradient of a scalar-valued tensor function at `x`
/// against central finite differences with the given step. The function is
/// evaluated twice up front; any bitwise mismatch is rejected as
/// non-determinism.
pub fn grad_check<F>(f: F, x: &[f64], shape: &[usize], step: f64, tol: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId, TensorError>,
{
    let eval = |data: &[f64]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let xid = tape.leaf(data.to_vec(), shape.to_vec(), false)?;
        let out = f(&mut tape, xid)?;
        if tape.data(out).len() != 1 {
            return Err(TensorError::Shape("grad_check requires a scalar function".into()));
        }
        Ok(tape.value(out))
    };

    let v1 = eval(x)?;
    let v2 = eval(x)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(TensorError::Determinism(format!(
            "repeated evaluation differs: {v1} vs {v2}"
        )));
    }

    // analytic gradient
    let mut tape = Tape::new();
    let xid = tape.leaf(x.to_vec(), shape.to_vec(), true)?;
    let out = f(&mut tape, xid)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(xid)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let mut max_rel = 0.0;
    let mut perturbed = x.to_vec();
    for i in 0..x.len() {
        let orig = perturbed[i];
        perturbed[i] = orig + step;
        let plus = eval(&perturbed)?;
        perturbed[i] = orig - step;
        let minus = eval(&perturbed)?;
        perturbed[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        max_rel = f64::max(max_rel, rel_error(analytic[i], numeric));
    }

    Ok(GradCheckReport {
        max_rel_error: max_rel,
        tol,
        checked: x.len(),
    })
}
