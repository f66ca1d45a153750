//! Distribution-sensitive two-stage gradient estimator.
//!
//! The sign function's surrogate is g(x) = k·tanh(tx). t follows a geometric
//! per-epoch schedule from t_min to t_max and is clamped per layer by
//! quantiles of the current standardized weight distribution; k = max(1/t, 1)
//! keeps the peak derivative k·t at max(1, t) ≥ 1, so early epochs behave
//! like an identity estimator and late epochs sharpen toward sign without
//! losing the guaranteed updatable mass.

use crate::error::{BinetError, Result};
use crate::tensor::Tensor;
use serde::Serialize;

/// Which backward surrogate a training run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EstimatorMode {
    /// Two-stage schedule with distribution clamps.
    Dte,
    /// Same schedule without clamps (fixed-strategy baseline).
    Ede,
    /// g'(x) = 1 on [−1, 1], 0 outside.
    Clip,
    /// g'(x) = 1 everywhere.
    Identity,
}

impl EstimatorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorMode::Dte => "dte",
            EstimatorMode::Ede => "ede",
            EstimatorMode::Clip => "clip",
            EstimatorMode::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dte" => Ok(EstimatorMode::Dte),
            "ede" => Ok(EstimatorMode::Ede),
            "clip" => Ok(EstimatorMode::Clip),
            "identity" => Ok(EstimatorMode::Identity),
            _ => Err(BinetError::InvalidArgument(format!(
                "unknown estimator mode {s:?} (dte|ede|clip|identity)"
            ))),
        }
    }
}

/// How the schedule clamp bounds are read off the weight distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ClampMode {
    /// t_eps = ε-quantile of |w|, t_100 = max |w|.
    Literal,
    /// t_eps = t_min, t_100 = 1 / ε-quantile of |w|: caps the steepness so
    /// at least ε of the weights stay inside the active region {|x| ≤ 1/t}.
    ActiveRegion,
}

impl ClampMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClampMode::Literal => "literal",
            ClampMode::ActiveRegion => "active-region",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(ClampMode::Literal),
            "active-region" => Ok(ClampMode::ActiveRegion),
            _ => Err(BinetError::InvalidArgument(format!(
                "unknown clamp mode {s:?} (literal|active-region)"
            ))),
        }
    }
}

/// Quantile-derived clamp interval for the schedule.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ClampBounds {
    pub t_eps: f64,
    pub t_100: f64,
    pub mode: ClampMode,
}

/// Per-layer estimator parameters, finalized once per epoch.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EstimatorState {
    pub t: f64,
    pub k: f64,
    pub epoch_i: usize,
    pub total_n: usize,
    pub epsilon: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl EstimatorState {
    /// Build a state directly from (t, epoch bookkeeping); enforces
    /// k = max(1/t, 1).
    pub fn from_t(
        t: f64,
        epoch_i: usize,
        total_n: usize,
        epsilon: f64,
        t_min: f64,
        t_max: f64,
    ) -> Self {
        EstimatorState { t, k: (1.0 / t).max(1.0), epoch_i, total_n, epsilon, t_min, t_max }
    }

    /// Finalize the state for one epoch from the layer's current
    /// standardized weights.
    pub fn for_epoch(
        epoch_i: usize,
        total_n: usize,
        epsilon: f64,
        t_min: f64,
        t_max: f64,
        weights_std: &Tensor,
        clamp: ClampMode,
    ) -> Result<Self> {
        let t_raw = raw_schedule(epoch_i, total_n, t_min, t_max)?;
        let bounds = clamp_bounds(weights_std, epsilon, clamp, t_min)?;
        let (t, k) = effective_t(t_raw, &bounds);
        Ok(EstimatorState { t, k, epoch_i, total_n, epsilon, t_min, t_max })
    }

    /// Unclamped schedule (the fixed EDE-style baseline).
    pub fn for_epoch_unclamped(
        epoch_i: usize,
        total_n: usize,
        epsilon: f64,
        t_min: f64,
        t_max: f64,
    ) -> Result<Self> {
        let t = raw_schedule(epoch_i, total_n, t_min, t_max)?;
        Ok(EstimatorState::from_t(t, epoch_i, total_n, epsilon, t_min, t_max))
    }
}

/// t_raw = t_min · 10^((i/N)·log10(t_max/t_min)); monotone in i.
pub fn raw_schedule(epoch_i: usize, total_n: usize, t_min: f64, t_max: f64) -> Result<f64> {
    if total_n == 0 {
        return Err(BinetError::InvalidArgument("schedule needs total epochs N > 0".into()));
    }
    if t_min <= 0.0 || t_max <= t_min {
        return Err(BinetError::InvalidArgument(format!(
            "schedule needs 0 < t_min < t_max, got {t_min}, {t_max}"
        )));
    }
    let frac = epoch_i as f64 / total_n as f64;
    Ok(t_min * 10f64.powf(frac * (t_max / t_min).log10()))
}

/// Nearest-rank quantile of |x|: sort ascending, take element ceil(q·n)
/// (1-based). q must lie in (0, 1]; q = 1 returns max|x|.
pub fn quantile_abs(x: &Tensor, q: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(BinetError::EmptyTensor("quantile_abs".into()));
    }
    if q <= 0.0 || q > 1.0 {
        return Err(BinetError::InvalidArgument(format!("quantile q must be in (0,1], got {q}")));
    }
    let mut abs: Vec<f32> = x.data().iter().map(|v| v.abs()).collect();
    abs.sort_unstable_by(f32::total_cmp);
    let n = abs.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    Ok(abs[rank - 1] as f64)
}

/// Compute the clamp interval from the current standardized weights.
/// `t_min` is only consulted in active-region mode.
pub fn clamp_bounds(
    weights_std: &Tensor,
    epsilon: f64,
    mode: ClampMode,
    t_min: f64,
) -> Result<ClampBounds> {
    match mode {
        ClampMode::Literal => {
            let t_eps = quantile_abs(weights_std, epsilon)?;
            let t_100 = quantile_abs(weights_std, 1.0)?;
            Ok(ClampBounds { t_eps, t_100, mode })
        }
        ClampMode::ActiveRegion => {
            let q = quantile_abs(weights_std, epsilon)?;
            // If ≥ ε of the weights sit at 0 they are at the derivative peak
            // for any t, so the cap can be disabled.
            let t_100 = if q < 1e-30 { f64::INFINITY } else { 1.0 / q };
            Ok(ClampBounds { t_eps: t_min, t_100, mode })
        }
    }
}

/// t = min(t_100, max(t_raw, t_eps)); k = max(1/t, 1).
pub fn effective_t(t_raw: f64, bounds: &ClampBounds) -> (f64, f64) {
    let t = bounds.t_100.min(t_raw.max(bounds.t_eps));
    let k = (1.0 / t).max(1.0);
    (t, k)
}

/// g'(x) = k·t·(1 − tanh²(t·x)) for one element.
#[inline]
pub fn dte_derivative_scalar(x: f64, t: f64, k: f64) -> f64 {
    let th = (t * x).tanh();
    k * t * (1.0 - th * th)
}

/// Elementwise g'(x) under the given state.
pub fn dte_derivative(x: &Tensor, state: &EstimatorState) -> Tensor {
    let (t, k) = (state.t, state.k);
    x.map(|v| dte_derivative_scalar(v as f64, t, k) as f32)
}

/// g(x) = k·tanh(t·x). Used by gradient checks and reports; the training
/// forward path always uses sign.
pub fn dte_forward(x: &Tensor, state: &EstimatorState) -> Tensor {
    let (t, k) = (state.t, state.k);
    x.map(|v| (k * (t * v as f64).tanh()) as f32)
}

/// Fraction of elements whose estimator derivative is at least
/// `delta` × the peak derivative k·t.
pub fn updatable_fraction(weights_std: &Tensor, state: &EstimatorState, delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) || delta <= 0.0 {
        return Err(BinetError::InvalidArgument(format!("delta must be in (0,1), got {delta}")));
    }
    if weights_std.is_empty() {
        return Err(BinetError::EmptyTensor("updatable_fraction".into()));
    }
    let peak = state.k * state.t;
    let threshold = delta * peak;
    let count = weights_std
        .data()
        .iter()
        .filter(|&&x| dte_derivative_scalar(x as f64, state.t, state.k) >= threshold)
        .count();
    Ok(count as f64 / weights_std.numel() as f64)
}

/// Backward multiplier for a given estimator mode. Identity and Clip ignore
/// the schedule; Dte and Ede evaluate g'.
pub fn estimator_derivative(x: &Tensor, mode: EstimatorMode, state: &EstimatorState) -> Tensor {
    match mode {
        EstimatorMode::Identity => Tensor::ones(x.shape()),
        EstimatorMode::Clip => x.map(|v| if (-1.0..=1.0).contains(&v) { 1.0 } else { 0.0 }),
        EstimatorMode::Dte | EstimatorMode::Ede => dte_derivative(x, state),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn state(t: f64) -> EstimatorState {
        EstimatorState::from_t(t, 0, 1, 0.1, 0.1, 10.0)
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_close(raw_schedule(0, 400, 0.1, 10.0).unwrap(), 0.1, 1e-12);
        assert_close(raw_schedule(200, 400, 0.1, 10.0).unwrap(), 1.0, 1e-12);
        assert_close(raw_schedule(400, 400, 0.1, 10.0).unwrap(), 10.0, 1e-9);
        assert!(raw_schedule(1, 0, 0.1, 10.0).is_err());
    }

    #[test]
    fn schedule_is_monotone() {
        let mut prev = 0.0;
        for i in 0..=100 {
            let t = raw_schedule(i, 100, 0.1, 10.0).unwrap();
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn quantile_nearest_rank() {
        let x = Tensor::from_vec(vec![1.0, -1.0, 3.0, -3.0]);
        assert_close(quantile_abs(&x, 0.5).unwrap(), 1.0, 0.0);
        assert_close(quantile_abs(&x, 1.0).unwrap(), 3.0, 0.0);
        assert!(quantile_abs(&x, 0.0).is_err());
        assert!(quantile_abs(&x, 1.5).is_err());
        let c = Tensor::from_vec(vec![2.5; 7]);
        for q in [0.1, 0.5, 0.9, 1.0] {
            assert_close(quantile_abs(&c, q).unwrap(), 2.5, 0.0);
        }
    }

    #[test]
    fn clamp_bounds_constant_tensor() {
        let c = Tensor::from_vec(vec![0.7; 5]);
        let b = clamp_bounds(&c, 0.1, ClampMode::Literal, 0.1).unwrap();
        assert_close(b.t_eps, 0.7, 1e-7);
        assert_close(b.t_100, 0.7, 1e-7);
        assert!(b.t_eps <= b.t_100);
    }

    #[test]
    fn active_region_is_reciprocal_quantile() {
        let c = Tensor::from_vec(vec![0.125, 0.125, 0.5, 2.0]);
        let b = clamp_bounds(&c, 0.5, ClampMode::ActiveRegion, 0.1).unwrap();
        assert_close(b.t_eps, 0.1, 0.0);
        assert_close(b.t_100, 8.0, 1e-12);
    }

    #[test]
    fn effective_t_clamps() {
        let b = ClampBounds { t_eps: 0.125, t_100: 4.0, mode: ClampMode::Literal };
        let (t, k) = effective_t(0.1, &b);
        assert_close(t, 0.125, 0.0);
        assert_close(k, 8.0, 1e-12);
        let (t, k) = effective_t(10.0, &b);
        assert_close(t, 4.0, 0.0);
        assert_close(k, 1.0, 0.0);
        let wide = ClampBounds { t_eps: 1e-3, t_100: 1e3, mode: ClampMode::Literal };
        let (t, k) = effective_t(1.0, &wide);
        assert_close(t, 1.0, 0.0);
        assert_close(k, 1.0, 0.0);
    }

    #[test]
    fn derivative_peak_values() {
        assert_close(dte_derivative_scalar(0.0, 1.0, 1.0), 1.0, 1e-15);
        assert_close(dte_derivative_scalar(0.0, 0.1, 10.0), 1.0, 1e-15);
        // near-saturated region
        assert_close(dte_derivative_scalar(0.5, 10.0, 1.0), 0.00181, 2e-5);
    }

    #[test]
    fn derivative_symmetric_and_nonnegative() {
        let s = state(3.7);
        for x in [-2.0f32, -0.5, 0.0, 0.5, 2.0] {
            let d = dte_derivative_scalar(x as f64, s.t, s.k);
            let dm = dte_derivative_scalar(-x as f64, s.t, s.k);
            assert_close(d, dm, 1e-15);
            assert!(d >= 0.0);
        }
    }

    #[test]
    fn forward_saturates_and_is_odd() {
        let s = state(1.0);
        let x = Tensor::from_vec(vec![20.0, 0.0, -20.0]);
        let g = dte_forward(&x, &s);
        assert_close(g.data()[0] as f64, 1.0, 1e-6);
        assert_close(g.data()[1] as f64, 0.0, 0.0);
        assert_close(g.data()[2] as f64, -1.0, 1e-6);
    }

    #[test]
    fn stage_boundary_continuity() {
        // k = max(1/t, 1) gives k=1 approaching t=1 from both sides
        let below = state(1.0 - 1e-9);
        let above = state(1.0 + 1e-9);
        assert_close(below.k * below.t, 1.0, 1e-8);
        assert_close(above.k * above.t, above.t, 1e-12);
        let d_below = dte_derivative_scalar(0.3, below.t, below.k);
        let d_above = dte_derivative_scalar(0.3, above.t, above.k);
        assert_close(d_below, d_above, 1e-6);
    }

    #[test]
    fn updatable_fraction_degenerate_cases() {
        let zeros = Tensor::zeros(&[64]);
        let f = updatable_fraction(&zeros, &state(5.0), 0.1).unwrap();
        assert_close(f, 1.0, 0.0);
        assert!(updatable_fraction(&zeros, &state(5.0), 0.0).is_err());
        assert!(updatable_fraction(&zeros, &state(5.0), 1.0).is_err());
    }

    #[test]
    fn identity_and_clip_multipliers() {
        let x = Tensor::from_vec(vec![-3.0, -1.0, 0.0, 1.0, 3.0]);
        let s = state(1.0);
        let id = estimator_derivative(&x, EstimatorMode::Identity, &s);
        assert!(id.data().iter().all(|&v| v == 1.0));
        let clip = estimator_derivative(&x, EstimatorMode::Clip, &s);
        assert_eq!(clip.data(), &[0.0, 1.0, 1.0, 1.0, 0.0]);
    }
}
