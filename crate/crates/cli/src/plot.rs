//! Static SVG rendering of a closed-loop run.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use lanerisk::mpc::LANE_WIDTH;
use lanerisk::simulator::{SimConfig, PREDICTION_HEADER, SIM_LOG_HEADER};
use serde::Deserialize;

/// Steps that get a vehicle marker, when present in the log.
pub const MARKER_STEPS: [usize; 4] = [1, 4, 7, 11];

const EV_COLOR: &str = "#1f4e9c";
const TV_COLOR: &str = "#b22222";
const PX_PER_M: f64 = 12.0;
const PAD: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SimRow {
    pub step: usize,
    pub t: f64,
    pub ev_x: f64,
    pub ev_y: f64,
    pub ev_psi: f64,
    pub ev_v: f64,
    pub ev_a: f64,
    pub ev_delta: f64,
    pub tv_x: f64,
    pub tv_y: f64,
    pub tv_psi: f64,
    pub tv_v: f64,
    pub tv_a: f64,
    pub tv_delta: f64,
    pub margin: f64,
    pub scp_iters: usize,
    pub max_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct PredRow {
    step: usize,
    k: usize,
    pred_x: f64,
    pred_y: f64,
}

/// One predicted trajectory per step, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPrediction {
    pub step: usize,
    pub points: Vec<(f64, f64)>,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let found = reader.headers().with_context(|| format!("{}: header", path.display()))?.clone();
    if found.iter().ne(header.iter().copied()) {
        bail!("{}: unexpected header `{}`, expected `{}`", path.display(), found.iter().collect::<Vec<_>>().join(","), header.join(","));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize().enumerate() {
        rows.push(rec.map_err(|e| anyhow!("{}: row {}: {e}", path.display(), i + 1))?);
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(rows)
}

pub fn read_sim_log(path: &Path) -> Result<Vec<SimRow>> {
    read_rows(path, &SIM_LOG_HEADER)
}

pub fn read_predictions(path: &Path) -> Result<Vec<StepPrediction>> {
    let rows: Vec<PredRow> = read_rows(path, &PREDICTION_HEADER)?;
    let mut out: Vec<StepPrediction> = Vec::new();
    for (i, r) in rows.into_iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.step == r.step => {
                if r.k != last.points.len() {
                    bail!("{}: row {}: step {} expects k = {}, found {}", path.display(), i + 1, r.step, last.points.len(), r.k);
                }
                last.points.push((r.pred_x, r.pred_y));
            }
            _ => {
                if r.k != 0 {
                    bail!("{}: row {}: step {} starts at k = {}", path.display(), i + 1, r.step, r.k);
                }
                out.push(StepPrediction { step: r.step, points: vec![(r.pred_x, r.pred_y)] });
            }
        }
    }
    Ok(out)
}

struct Frame {
    x_min: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (PAD + (x - self.x_min) * PX_PER_M, PAD + (self.y_max - y) * PX_PER_M)
    }

    fn points(&self, pts: impl IntoIterator<Item = (f64, f64)>) -> String {
        pts.into_iter()
            .map(|(x, y)| {
                let (u, v) = self.px(x, y);
                format!("{u:.2},{v:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn render_svg(rows: &[SimRow], predictions: &[StepPrediction], sim: &SimConfig) -> Result<String> {
    if rows.is_empty() {
        bail!("simulation log is empty");
    }
    let road_top = 3.0 * LANE_WIDTH;
    let xs = rows
        .iter()
        .flat_map(|r| [r.ev_x, r.tv_x])
        .chain(predictions.iter().flat_map(|p| p.points.iter().map(|q| q.0)));
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let frame = Frame { x_min: x_lo - 5.0, y_max: road_top + 1.0 };
    let width = 2.0 * PAD + (x_hi - x_lo + 10.0) * PX_PER_M;
    let height = 2.0 * PAD + (road_top + 2.0) * PX_PER_M;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for lane in 0..=3 {
        let y = lane as f64 * LANE_WIDTH;
        let (u0, v) = frame.px(frame.x_min, y);
        let (u1, _) = frame.px(x_hi + 5.0, y);
        let dash = if lane == 0 || lane == 3 { "" } else { r#" stroke-dasharray="8,6""# };
        let _ = writeln!(
            svg,
            r##"<line class="lane" x1="{u0:.2}" y1="{v:.2}" x2="{u1:.2}" y2="{v:.2}" stroke="#555" stroke-width="1.5"{dash}/>"##
        );
    }
    for p in predictions {
        let _ = writeln!(
            svg,
            r##"<polyline class="prediction" data-step="{}" points="{}" fill="none" stroke="#888" stroke-width="1" stroke-dasharray="2,3"/>"##,
            p.step,
            frame.points(p.points.iter().copied())
        );
    }
    for (name, color, pts) in [
        ("ev", EV_COLOR, rows.iter().map(|r| (r.ev_x, r.ev_y)).collect::<Vec<_>>()),
        ("tv", TV_COLOR, rows.iter().map(|r| (r.tv_x, r.tv_y)).collect::<Vec<_>>()),
    ] {
        let _ = writeln!(
            svg,
            r#"<polyline class="trajectory {name}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            frame.points(pts)
        );
    }
    let marked: Vec<&SimRow> = MARKER_STEPS.iter().filter_map(|s| rows.iter().find(|r| r.step == *s)).collect();
    // Wheelbase plus overhangs by a typical car width.
    let (len, wid) = (sim.bicycle.lf + sim.bicycle.lr + 1.5, 1.8);
    for (i, r) in marked.iter().enumerate() {
        let opacity = if marked.len() > 1 { 0.25 + 0.75 * i as f64 / (marked.len() - 1) as f64 } else { 1.0 };
        for (name, color, x, y) in [("ev", EV_COLOR, r.ev_x, r.ev_y), ("tv", TV_COLOR, r.tv_x, r.tv_y)] {
            let (u, v) = frame.px(x - len / 2.0, y + wid / 2.0);
            let _ = writeln!(
                svg,
                r#"<rect class="marker {name}" data-step="{}" x="{u:.2}" y="{v:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="{opacity:.2}"/>"#,
                r.step,
                len * PX_PER_M,
                wid * PX_PER_M
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="{:.0}" font-family="sans-serif" font-size="12">EV (blue) and TV (red), steps 1-{}; dotted: predicted TV trajectories</text>"#,
        PAD - 10.0,
        rows.len()
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}
