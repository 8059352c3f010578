//! Synthetic three-stage lane-change paths.
//!
//! A path keeps the original lane for `t_prep`, crosses to the target lane
//! along a cubic in `x` for `t_change`, then keeps the target lane. The
//! longitudinal speed is constant, so samples are evenly spaced in `x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lateral stage geometry shared by every path in a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaneChangeGeometry {
    pub y_origin: f64,
    pub y_target: f64,
    pub t_prep: f64,
    pub t_change: f64,
    pub t_finish: f64,
}

impl Default for LaneChangeGeometry {
    fn default() -> Self {
        Self { y_origin: 2.625, y_target: 7.875, t_prep: 2.0, t_change: 4.0, t_finish: 2.0 }
    }
}

impl LaneChangeGeometry {
    pub fn validate(&self) -> Result<()> {
        let durations = [self.t_prep, self.t_change, self.t_finish];
        if durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidInput(format!("stage durations must be positive: {durations:?}")));
        }
        if self.y_origin == self.y_target || !self.y_origin.is_finite() || !self.y_target.is_finite() {
            return Err(Error::InvalidInput("origin and target lanes must differ".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanePath {
    pub points: Vec<(f64, f64)>,
    pub v: f64,
    pub dt: f64,
}

impl LanePath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Cubic lane-change profile with zero slope at both ends.
pub fn cubic_lane_change(x: f64, x0: f64, xt: f64, y0: f64, yt: f64) -> Result<f64> {
    if !(x0 < xt) || !(x0..=xt).contains(&x) {
        return Err(Error::OutsideInterval { x, x0, xt });
    }
    let s = (x - x0) / (xt - x0);
    let dy = yt - y0;
    Ok(y0 + 3.0 * dy * s * s - 2.0 * dy * s * s * s)
}

/// Samples one lane-change path at speed `v`.
///
/// The time grid is `0, dt, ..., t_prep + t_change + t_finish + dt`: the
/// finishing stage carries one sample beyond its nominal end, giving 82
/// points for the default 2 s / 4 s / 2 s stages at 0.1 s.
pub fn build_path(v: f64, geom: &LaneChangeGeometry, dt: f64) -> Result<LanePath> {
    if !(v > 0.0 && dt > 0.0) {
        return Err(Error::InvalidInput(format!("speed and sampling time must be positive (v={v}, dt={dt})")));
    }
    geom.validate()?;
    let steps = |t: f64| (t / dt).round() as usize;
    let change_start = steps(geom.t_prep);
    let change_end = steps(geom.t_prep + geom.t_change);
    let count = steps(geom.t_prep + geom.t_change + geom.t_finish) + 2;

    let x_at = |i: usize| i as f64 * v * dt;
    let (x0, xt) = (x_at(change_start), x_at(change_end));
    let points = (0..count)
        .map(|i| {
            let x = x_at(i);
            let y = if i <= change_start {
                geom.y_origin
            } else if i >= change_end {
                geom.y_target
            } else {
                cubic_lane_change(x, x0, xt, geom.y_origin, geom.y_target)?
            };
            Ok((x, y))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LanePath { points, v, dt })
}

/// Speeds `v_min, v_min + v_step, ..., v_max` (inclusive).
pub fn velocity_grid(v_min: f64, v_max: f64, v_step: f64) -> Result<Vec<f64>> {
    if !(v_step > 0.0) || !(v_min <= v_max) || !v_min.is_finite() || !v_max.is_finite() {
        return Err(Error::InvalidInput(format!(
            "invalid velocity sweep: min={v_min} max={v_max} step={v_step}"
        )));
    }
    // Round so that 10..=40 by 0.1 lands on 301 values despite 0.1 not being
    // representable.
    let n = ((v_max - v_min) / v_step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| v_min + i as f64 * v_step).collect())
}

/// One path per speed of the sweep, ordered by speed.
pub fn build_corpus(
    v_min: f64,
    v_max: f64,
    v_step: f64,
    geom: &LaneChangeGeometry,
    dt: f64,
) -> Result<Vec<LanePath>> {
    velocity_grid(v_min, v_max, v_step)?
        .into_iter()
        .map(|v| build_path(v, geom, dt))
        .collect()
}
