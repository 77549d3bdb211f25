use super::{empirical_loss, evaluate_loss, flatten_params, unflatten_params, LossConfig, Sample, SpherePoints};
use crate::error::Result;
use crate::netmetric::{ControllerNet, MetricNet};
use crate::systems::SystemModel;

/// Outcome of comparing the analytic loss gradient against central finite
/// differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Checks every `stride`-th parameter coordinate against the fourth-order
/// central difference with step `h`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    metric: &MetricNet<f64>,
    controller: &ControllerNet<f64>,
    system: &SystemModel<f64>,
    batch: &[Sample<f64>],
    config: &LossConfig<f64>,
    points: &SpherePoints<f64>,
    h: f64,
    floor: f64,
    stride: usize,
) -> Result<GradCheck> {
    let (_, grad) = empirical_loss(metric, controller, system, batch, config, points)?;
    let analytic = grad.flatten();
    let base = flatten_params(metric, controller);
    let mut m = metric.clone();
    let mut c = controller.clone();
    let mut eval_at = |params: &[f64]| -> Result<f64> {
        unflatten_params(&mut m, &mut c, params);
        Ok(evaluate_loss(&m, &c, system, batch, config, points)?.total)
    };
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut params = base.clone();
    for i in (0..base.len()).step_by(stride.max(1)) {
        let mut at = |offset: f64| {
            params[i] = base[i] + offset;
            eval_at(&params)
        };
        let (f2, f1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
        params[i] = base[i];
        let numeric = (8.0 * (f1 - m1) - (f2 - m2)) / (12.0 * h);
        let err = relative_error(analytic[i], numeric, floor);
        out.checked += 1;
        if err > out.max_rel_err || out.checked == 1 {
            out.max_rel_err = out.max_rel_err.max(err);
            if err >= out.max_rel_err {
                out.worst_index = i;
                out.analytic = analytic[i];
                out.numeric = numeric;
            }
        }
    }
    Ok(out)
}
