use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NumericError;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero are judged on absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// `(parameter index, flat coordinate)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

/// Compares tape gradients of `loss` against central finite differences,
/// coordinate by coordinate.
///
/// `loss` receives a fresh tape with each parameter registered as a leaf
/// (in order) and must return a single-element node.
pub fn finite_difference_check<E, F>(params: &[Tensor], eps: f64, loss: F) -> Result<GradCheckReport, E>
where
    E: From<NumericError>,
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(NumericError::InvalidArgument(format!("eps {eps} outside [1e-6, 1e-4]")).into());
    }

    let evaluate = |values: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = loss(&mut tape, &vars)?;
        let v = tape
            .value(root)
            .item()
            .ok_or_else(|| NumericError::InvalidArgument("loss is not a scalar".into()))?;
        if !v.is_finite() {
            return Err(NumericError::NonFinite {
                context: "loss at perturbed point".into(),
            }
            .into());
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = loss(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, (param, var)) in params.iter().zip(&vars).enumerate() {
        let analytic = grads.get(*var)?;
        for j in 0..param.len() {
            let mut bumped = param.data().to_vec();
            bumped[j] = param.data()[j] + eps;
            work[pi] = Tensor::new(param.shape().to_vec(), bumped.clone())?;
            let up = evaluate(&work)?;
            bumped[j] = param.data()[j] - eps;
            work[pi] = Tensor::new(param.shape().to_vec(), bumped)?;
            let down = evaluate(&work)?;
            work[pi] = param.clone();

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            report.coordinates += 1;
            report.max_absolute_error = report.max_absolute_error.max(abs);
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(rel);
                if rel >= report.max_relative_error {
                    report.worst = Some((pi, j));
                }
            }
        }
    }
    Ok(report)
}
