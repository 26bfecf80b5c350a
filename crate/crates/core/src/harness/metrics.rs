//! Trial aggregation into normalized error curves.

use nalgebra::DVector;

use crate::ci::CiTrace;
use crate::error::{Error, Result};
use crate::observation::GlobalModel;
use crate::token::EpisodeTrace;

/// Normal-approximation quantile used for confidence half-widths.
pub const Z95: f64 = 1.96;

/// Trial-averaged curve with 95% half-widths.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub name: String,
    pub times: Vec<usize>,
    pub values: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub trials: usize,
}

impl MetricSeries {
    pub fn value_at(&self, t: usize) -> Option<f64> {
        self.times.binary_search(&t).ok().map(|k| self.values[k])
    }

    pub fn half_width_at(&self, t: usize) -> Option<f64> {
        self.times.binary_search(&t).ok().map(|k| self.half_widths[k])
    }

    /// First recorded tick with a non-finite value or half-width.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values
            .iter()
            .zip(&self.half_widths)
            .position(|(v, h)| !v.is_finite() || !h.is_finite())
            .map(|k| self.times[k])
    }
}

/// Mean and `1.96 sd / sqrt(R)` across trials of `scale * per_trial[r][k]`,
/// accumulated in trial order.
pub fn aggregate(name: &str, times: &[usize], per_trial: &[&[f64]], scale: f64) -> MetricSeries {
    let r = per_trial.len();
    let mut values = Vec::with_capacity(times.len());
    let mut half_widths = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let mean = per_trial.iter().map(|s| s[k] * scale).sum::<f64>() / r as f64;
        let hw = if r > 1 {
            let var = per_trial.iter().map(|s| (s[k] * scale - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
            Z95 * (var / r as f64).sqrt()
        } else {
            0.0
        };
        values.push(mean);
        half_widths.push(hw);
    }
    MetricSeries { name: name.to_string(), times: times.to_vec(), values, half_widths, trials: r }
}

/// `|s(0) - theta|^2 = |theta|^2` under zero initialization.
pub fn rmse_normalizer(theta: &DVector<f64>) -> Result<f64> {
    let v = theta.norm_squared();
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config("relative errors need a nonzero theta".into()))
    }
}

fn check_times<'a, I: Iterator<Item = &'a [usize]>>(mut times: I, what: &'static str) -> Result<&'a [usize]> {
    let first = times.next().ok_or(Error::MissingTrace(what))?;
    if times.any(|t| t != first) {
        return Err(Error::Config(format!("{what} traces recorded different ticks")));
    }
    Ok(first)
}

/// `(1/n) sum_i E|s_i(t) - theta|^2 / |theta|^2`.
pub fn rmse_network_ci(traces: &[CiTrace], theta: &DVector<f64>) -> Result<MetricSeries> {
    let times = check_times(traces.iter().map(|t| t.times.as_slice()), "ci")?;
    let series: Vec<&[f64]> = traces.iter().map(|t| t.network_sq_err.as_slice()).collect();
    Ok(aggregate("rmse_ci", times, &series, 1.0 / rmse_normalizer(theta)?))
}

/// `E|s(t) - theta|^2 / |theta|^2`.
pub fn rmse_token(traces: &[EpisodeTrace], theta: &DVector<f64>) -> Result<MetricSeries> {
    let times = check_times(traces.iter().map(|t| t.times.as_slice()), "token")?;
    let series: Vec<&[f64]> = traces.iter().map(|t| t.token_sq_err.as_slice()).collect();
    Ok(aggregate("rmse_token", times, &series, 1.0 / rmse_normalizer(theta)?))
}

/// `E[(1/|S(t)|) sum_{i in S(t)} |s(tau_i(t)) - theta|^2] / |theta|^2`.
pub fn rmse_last_seen(traces: &[EpisodeTrace], theta: &DVector<f64>) -> Result<MetricSeries> {
    let times = check_times(traces.iter().map(|t| t.times.as_slice()), "token")?;
    let series: Vec<&[f64]> = traces.iter().map(|t| t.last_seen_sq_err.as_slice()).collect();
    Ok(aggregate("rmse_last_seen", times, &series, 1.0 / rmse_normalizer(theta)?))
}

/// `t * E|e(t)|^2 / trace(Sigma_c^-1)` from per-trial squared errors.
pub fn optimality_ratio(
    name: &str,
    times: &[usize],
    per_trial_sq_err: &[&[f64]],
    model: &GlobalModel,
) -> Result<MetricSeries> {
    if per_trial_sq_err.len() < 2 {
        return Err(Error::Config("the optimality ratio needs at least two trials".into()));
    }
    if per_trial_sq_err.iter().any(|s| s.len() != times.len()) {
        return Err(Error::Config(format!("{name}: trace length does not match its ticks")));
    }
    let trace = model.sigma_c_inverse_trace();
    let mut series = aggregate(name, times, per_trial_sq_err, 1.0);
    for (k, &t) in times.iter().enumerate() {
        let f = t as f64 / trace;
        series.values[k] *= f;
        series.half_widths[k] *= f;
    }
    Ok(series)
}

/// Optimality ratio of the token estimate.
pub fn token_optimality_ratio(traces: &[EpisodeTrace], model: &GlobalModel) -> Result<MetricSeries> {
    let times = check_times(traces.iter().map(|t| t.times.as_slice()), "token")?;
    let series: Vec<&[f64]> = traces.iter().map(|t| t.token_sq_err.as_slice()).collect();
    optimality_ratio("optimality_ratio_token", times, &series, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta() -> DVector<f64> {
        DVector::from_vec(vec![1.0, 2.0])
    }

    fn episode(errs: &[f64], last_seen: &[f64]) -> EpisodeTrace {
        EpisodeTrace {
            times: (0..errs.len()).collect(),
            holder: vec![0; errs.len()],
            visited_count: vec![1; errs.len()],
            token_sq_err: errs.to_vec(),
            last_seen_sq_err: last_seen.to_vec(),
            ..EpisodeTrace::default()
        }
    }

    #[test]
    fn ci_rmse_trivial_and_fixture() {
        let th = theta();
        let zero = vec![DVector::zeros(2), DVector::zeros(2)];
        let exact = vec![th.clone(), th.clone()];
        let tr = CiTrace::from_estimates(vec![0, 1], &[zero.clone(), exact.clone()], &th);
        let m = rmse_network_ci(&[tr.clone(), tr], &th).unwrap();
        assert_eq!(m.values, vec![1.0, 0.0]);
        assert_eq!(m.half_widths, vec![0.0, 0.0]);

        // Trial 1: agents at (0,2) and (1,0): errors 1 and 4, mean 2.5.
        // Trial 2: agents at (1,1) and (2,2): errors 1 and 1, mean 1.
        // r-MSE = mean(2.5, 1) / 5 = 0.35.
        let t1 = CiTrace::from_estimates(
            vec![0],
            &[vec![DVector::from_vec(vec![0.0, 2.0]), DVector::from_vec(vec![1.0, 0.0])]],
            &th,
        );
        let t2 = CiTrace::from_estimates(
            vec![0],
            &[vec![DVector::from_vec(vec![1.0, 1.0]), DVector::from_vec(vec![2.0, 2.0])]],
            &th,
        );
        let m = rmse_network_ci(&[t1, t2], &th).unwrap();
        assert!((m.values[0] - 0.35).abs() < 1e-15);
        // sd of (0.5, 0.2) is 0.3/sqrt(2).
        let hw = 1.96 * (0.045f64 / 2.0).sqrt();
        assert!((m.half_widths[0] - hw).abs() < 1e-12);
    }

    #[test]
    fn token_rmse_trivial_and_fixture() {
        let th = theta();
        let m = rmse_token(&[episode(&[5.0, 0.0], &[5.0, 0.0])], &th).unwrap();
        assert_eq!(m.values, vec![1.0, 0.0]);
        let m = rmse_token(&[episode(&[2.0], &[0.0]), episode(&[3.0], &[0.0])], &th).unwrap();
        assert!((m.values[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn last_seen_fixture_with_staged_visits() {
        // Three agents, theta = (1,2), |theta|^2 = 5. Tick 0: only agent 0
        // visited with estimate 0 (error 5). Tick 1: agents 0 and 1 visited,
        // errors 5 and 1. Tick 2: all three, errors 5, 1, 0.
        let th = theta();
        let per_tick = [5.0, (5.0 + 1.0) / 2.0, (5.0 + 1.0 + 0.0) / 3.0];
        let m = rmse_last_seen(&[episode(&[0.0; 3], &per_tick)], &th).unwrap();
        assert!((m.values[0] - 1.0).abs() < 1e-15);
        assert!((m.values[1] - 0.6).abs() < 1e-15);
        assert!((m.values[2] - 0.4).abs() < 1e-15);
        let m = rmse_last_seen(&[episode(&[0.0], &[0.0])], &th).unwrap();
        assert_eq!(m.values[0], 0.0);
    }

    #[test]
    fn missing_traces_and_zero_theta() {
        assert!(matches!(rmse_token(&[], &theta()), Err(Error::MissingTrace(_))));
        assert!(matches!(rmse_network_ci(&[], &theta()), Err(Error::MissingTrace(_))));
        assert!(rmse_normalizer(&DVector::zeros(2)).is_err());
    }
}
