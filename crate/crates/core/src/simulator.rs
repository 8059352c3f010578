//! Closed-loop two-vehicle scenario: the ego vehicle (EV) runs the
//! safety-constrained MPC against network predictions of the target vehicle
//! (TV), which itself runs an unconstrained lane-change MPC.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::WINDOW;
use crate::dynamics::{linearize, step_truth, BicycleParams, ControlInput, VehicleState};
use crate::error::{Error, Result};
use crate::mpc::{
    build_reference, ellipse_margin, shift_inputs, solve_ocp, tv_policy, OcpConfig, SafetyEllipse, TvPrediction,
    LANE_WIDTH,
};
use crate::neuralnet::{model_forward, ModelParams, SequenceTensor};

/// Most recent TV positions on the data grid, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    points: VecDeque<(f64, f64)>,
    capacity: usize,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { points: VecDeque::with_capacity(capacity), capacity }
    }

    /// Appends a point, dropping the oldest once full.
    pub fn push(&mut self, point: (f64, f64)) {
        if self.points.len() == self.capacity {
            self.points.pop_front();
        }
        self.points.push_back(point);
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.points.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_warm(&self) -> bool {
        self.points.len() == self.capacity
    }
}

/// Fills a buffer by extrapolating the current motion backwards at constant
/// velocity; the last point is the current position.
pub fn cold_start_history(tv: &VehicleState, m: usize, dt: f64) -> HistoryBuffer {
    let mut buf = HistoryBuffer::new(m);
    let (c, s) = (tv.psi.cos(), tv.psi.sin());
    for j in 0..m {
        let back = (m - 1 - j) as f64 * tv.v * dt;
        buf.push((tv.x - back * c, tv.y - back * s));
    }
    buf
}

/// Raw network output for `buffer`, returned in world coordinates on the
/// data grid before any offset correction.
pub fn predict_world(model: &ModelParams, buffer: &HistoryBuffer) -> Result<Vec<(f64, f64)>> {
    if !buffer.is_warm() {
        return Err(Error::HistoryNotWarm { have: buffer.len(), need: buffer.capacity() });
    }
    let points = buffer.points();
    let x_ref = points[points.len() - 1].0;
    let calibrated: Vec<_> = points.iter().map(|&(x, y)| (x - x_ref, y)).collect();
    let pred = model_forward(model, &SequenceTensor::from_points(&calibrated));
    Ok(pred.to_points().into_iter().map(|(x, y)| (x + x_ref, y)).collect())
}

/// Network prediction translated so its first point is the current TV
/// position, then decimated by `stride` to `horizon + 1` points.
pub fn prediction_adapter(
    model: &ModelParams,
    buffer: &HistoryBuffer,
    tv_now: &VehicleState,
    horizon: usize,
    stride: usize,
) -> Result<TvPrediction> {
    let raw = predict_world(model, buffer)?;
    if stride == 0 || horizon * stride >= raw.len() {
        return Err(Error::InvalidInput(format!(
            "horizon {horizon} at stride {stride} needs more than the {} predicted points",
            raw.len()
        )));
    }
    let (ox, oy) = (tv_now.x - raw[0].0, tv_now.y - raw[0].1);
    let mut positions: Vec<_> = (0..=horizon).map(|k| (raw[k * stride].0 + ox, raw[k * stride].1 + oy)).collect();
    positions[0] = (tv_now.x, tv_now.y);
    Ok(TvPrediction { positions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub steps: usize,
    pub mpc: OcpConfig,
    pub ellipse: SafetyEllipse,
    pub ev_initial: VehicleState,
    pub tv_initial: VehicleState,
    pub ev_v_ref: f64,
    pub tv_v_ref: f64,
    pub ev_lane_y: f64,
    pub tv_target_lane_y: f64,
    pub bicycle: BicycleParams,
    /// Sampling time of the predictor and of the truth integration (s).
    pub data_dt: f64,
    /// Recorded for provenance; the loop draws no random numbers.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let middle = 1.5 * LANE_WIDTH;
        Self {
            steps: 11,
            mpc: OcpConfig::default(),
            ellipse: SafetyEllipse::default(),
            ev_initial: VehicleState::new(28.0, middle, 0.0, 20.0),
            tv_initial: VehicleState::new(36.0, 0.5 * LANE_WIDTH, 0.0, 18.0),
            ev_v_ref: 20.0,
            tv_v_ref: 20.0,
            ev_lane_y: middle,
            tv_target_lane_y: middle,
            bicycle: BicycleParams::default(),
            data_dt: 0.1,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.mpc.validate()?;
        if self.steps == 0 {
            return Err(Error::InvalidInput("simulation needs at least one step".into()));
        }
        if !self.bicycle.is_valid() {
            return Err(Error::InvalidInput(format!("invalid bicycle parameters {:?}", self.bicycle)));
        }
        if !(self.ellipse.semi_axis_x > 0.0 && self.ellipse.semi_axis_y > 0.0) {
            return Err(Error::InvalidInput(format!("ellipse semi-axes must be positive: {:?}", self.ellipse)));
        }
        if !self.ev_initial.is_finite() || !self.tv_initial.is_finite() {
            return Err(Error::InvalidInput("initial states must be finite".into()));
        }
        self.stride()?;
        Ok(())
    }

    /// MPC sampling time in data-grid steps.
    pub fn stride(&self) -> Result<usize> {
        let ratio = self.mpc.dt / self.data_dt;
        let stride = ratio.round();
        if !(self.data_dt > 0.0) || stride < 1.0 || (ratio - stride).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "MPC sampling time {} is not an integer multiple of the data sampling time {}",
                self.mpc.dt, self.data_dt
            )));
        }
        Ok(stride as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStep {
    pub step: usize,
    pub time: f64,
    /// States at the start of the step.
    pub ev: VehicleState,
    pub tv: VehicleState,
    pub ev_input: ControlInput,
    pub tv_input: ControlInput,
    pub prediction: TvPrediction,
    /// Smallest realized ellipse margin over the data-grid instants of the step.
    pub margin: f64,
    pub scp_iterations: usize,
    pub max_slack: f64,
    /// EV plan for the horizon.
    pub ev_plan: Vec<VehicleState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub steps: Vec<SimStep>,
    pub final_ev: VehicleState,
    pub final_tv: VehicleState,
    /// TV positions on the MPC grid from the first step until `horizon` MPC
    /// steps past the end, continuing the TV controller alone.
    pub tv_realized: Vec<(f64, f64)>,
}

impl SimLog {
    /// Mean distance between the predicted TV points `k = 1..=N` of `step`
    /// (0-based) and the realized TV positions at the same times.
    pub fn prediction_error(&self, step: usize) -> f64 {
        let pred = &self.steps[step].prediction.positions;
        let n = pred.len() - 1;
        (1..=n)
            .map(|k| {
                let (rx, ry) = self.tv_realized[step + k];
                (pred[k].0 - rx).hypot(pred[k].1 - ry)
            })
            .sum::<f64>()
            / n as f64
    }
}

pub fn run_closed_loop(config: &SimConfig, model: &ModelParams) -> Result<SimLog> {
    config.validate()?;
    let stride = config.stride()?;
    let n = config.mpc.horizon;
    let dt = config.data_dt;
    let mut ev = config.ev_initial;
    let mut tv = config.tv_initial;
    let mut history = cold_start_history(&tv, WINDOW, dt);
    let mut ev_warm: Option<Vec<ControlInput>> = None;
    let mut tv_warm: Option<Vec<ControlInput>> = None;
    let mut steps = Vec::with_capacity(config.steps);
    let mut tv_realized = vec![tv.position()];

    for step in 1..=config.steps {
        let prediction = prediction_adapter(model, &history, &tv, n, stride)?;
        let model_ev = linearize(&ev, &config.bicycle, config.mpc.dt);
        let reference = build_reference(&config.mpc, config.ev_lane_y, config.ev_v_ref, ev.x);
        let ev_sol = solve_ocp(
            &ev,
            &model_ev,
            &reference,
            Some(&prediction),
            &config.ellipse,
            &config.mpc,
            ev_warm.as_deref(),
        )?;
        let (tv_input, tv_sol) =
            tv_policy(&tv, &config.bicycle, &config.mpc, config.tv_target_lane_y, config.tv_v_ref, tv_warm.as_deref())?;
        let ev_input = ev_sol.inputs[0];

        let (ev0, tv0) = (ev, tv);
        let margin_of = |e: &VehicleState, t: &VehicleState| ellipse_margin(e.x - t.x, e.y - t.y, &config.ellipse);
        let mut margin = margin_of(&ev, &tv);
        for _ in 0..stride {
            ev = step_truth(&ev, &ev_input, &config.bicycle, dt, 1);
            tv = step_truth(&tv, &tv_input, &config.bicycle, dt, 1);
            history.push(tv.position());
            margin = margin.min(margin_of(&ev, &tv));
        }
        tv_realized.push(tv.position());

        steps.push(SimStep {
            step,
            time: (step - 1) as f64 * config.mpc.dt,
            ev: ev0,
            tv: tv0,
            ev_input,
            tv_input,
            prediction,
            margin,
            scp_iterations: ev_sol.scp_iterations,
            max_slack: ev_sol.max_slack,
            ev_plan: ev_sol.states.clone(),
        });
        ev_warm = Some(shift_inputs(&ev_sol.inputs));
        tv_warm = Some(shift_inputs(&tv_sol.inputs));
    }

    let (final_ev, final_tv) = (ev, tv);
    for _ in 0..n {
        let (u, sol) =
            tv_policy(&tv, &config.bicycle, &config.mpc, config.tv_target_lane_y, config.tv_v_ref, tv_warm.as_deref())?;
        for _ in 0..stride {
            tv = step_truth(&tv, &u, &config.bicycle, dt, 1);
        }
        tv_realized.push(tv.position());
        tv_warm = Some(shift_inputs(&sol.inputs));
    }
    Ok(SimLog { steps, final_ev, final_tv, tv_realized })
}

pub const SIM_LOG_HEADER: [&str; 17] = [
    "step", "t", "ev_x", "ev_y", "ev_psi", "ev_v", "ev_a", "ev_delta", "tv_x", "tv_y", "tv_psi", "tv_v", "tv_a",
    "tv_delta", "margin", "scp_iters", "max_slack",
];

pub const PREDICTION_HEADER: [&str; 4] = ["step", "k", "pred_x", "pred_y"];

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

pub fn write_sim_log(path: &Path, log: &SimLog) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SIM_LOG_HEADER)?;
    for s in &log.steps {
        let mut row = vec![s.step.to_string()];
        row.extend(
            [
                s.time,
                s.ev.x,
                s.ev.y,
                s.ev.psi,
                s.ev.v,
                s.ev_input.accel,
                s.ev_input.steer,
                s.tv.x,
                s.tv.y,
                s.tv.psi,
                s.tv.v,
                s.tv_input.accel,
                s.tv_input.steer,
                s.margin,
            ]
            .iter()
            .map(f64::to_string),
        );
        row.push(s.scp_iterations.to_string());
        row.push(s.max_slack.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_predictions(path: &Path, log: &SimLog) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(PREDICTION_HEADER)?;
    for s in &log.steps {
        for (k, (x, y)) in s.prediction.positions.iter().enumerate() {
            w.write_record([s.step.to_string(), k.to_string(), x.to_string(), y.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
