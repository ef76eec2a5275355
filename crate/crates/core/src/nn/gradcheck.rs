use super::NnError;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Max over coordinates of `|a − n| / max(1e-12, |a| + |n|)`.
    pub max_relative_error: f64,
    /// Coordinate where the maximum was reached.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the analytic gradient returned by `loss` at `params` against
/// central differences with the given step.
///
/// `loss` returns the value and its analytic gradient; only the value is used
/// at the perturbed points.
pub fn finite_diff_check<F>(mut loss: F, params: &[f64], step: f64) -> Result<GradCheck, NnError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (value, analytic) = loss(params);
    if !value.is_finite() {
        return Err(NnError::NonFinite {
            context: "loss at the base point".into(),
            value,
        });
    }
    if analytic.len() != params.len() {
        return Err(NnError::ParamCount {
            expected: params.len(),
            actual: analytic.len(),
        });
    }
    let mut probe = params.to_vec();
    let mut worst = GradCheck {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
    };
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let plus = loss(&probe).0;
        probe[i] = params[i] - step;
        let minus = loss(&probe).0;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NnError::NonFinite {
                context: format!("loss with coordinate {i} perturbed"),
                value: if plus.is_finite() { minus } else { plus },
            });
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
        if err > worst.max_relative_error {
            worst = GradCheck {
                max_relative_error: err,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(worst)
}
