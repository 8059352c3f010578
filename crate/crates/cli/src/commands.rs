use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lanerisk::dataset::{load_dataset, save_dataset, split_and_shuffle, test_csv, train_csv, windows_from_corpus};
use lanerisk::lanegen::build_corpus;
use lanerisk::neuralnet::{
    evaluate, load_weights, save_weights, train, write_train_log, InputStats, ModelParams,
};
use lanerisk::simulator::{run_closed_loop, write_predictions, write_sim_log};

use crate::config::RunConfig;
use crate::plot::{read_predictions, read_sim_log, render_svg};

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const EVAL_SAMPLES_FILE: &str = "eval_samples.csv";
pub const EVAL_HISTOGRAM_FILE: &str = "eval_histogram.csv";
pub const SIM_LOG_FILE: &str = "sim_log.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const PLOT_FILE: &str = "scenario.svg";

pub const HISTOGRAM_BIN_WIDTH: f64 = 1.0;
pub const HISTOGRAM_UPPER: f64 = 30.0;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenDataSummary {
    pub paths: usize,
    pub samples: usize,
    pub train: usize,
    pub test: usize,
}

impl fmt::Display for GenDataSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} paths, {} samples, {} train, {} test", self.paths, self.samples, self.train, self.test)
    }
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<GenDataSummary> {
    cfg.validate()?;
    let c = &cfg.corpus;
    let corpus = build_corpus(c.v_min, c.v_max, c.v_step, &c.geometry, c.dt)?;
    let windows = windows_from_corpus(&corpus, c.window)?;
    let samples = windows.len();
    let ds = split_and_shuffle(windows, c.train_ratio, c.seed)?;
    create_dir(out)?;
    save_dataset(&ds, out)?;
    Ok(GenDataSummary { paths: corpus.len(), samples, train: ds.train.len(), test: ds.test.len() })
}

fn require_dataset(data: &Path) -> Result<()> {
    for file in [train_csv(data), test_csv(data)] {
        if !file.is_file() {
            bail!("dataset file {} not found (run gen-data first)", file.display());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub iterations: usize,
    pub first_rmse: f64,
    pub final_rmse: f64,
    pub weights: PathBuf,
    pub log: PathBuf,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} iterations, batch RMSE {:.4} -> {:.4}; weights {}, log {}",
            self.iterations,
            self.first_rmse,
            self.final_rmse,
            self.weights.display(),
            self.log.display()
        )
    }
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    require_dataset(data)?;
    let ds = load_dataset(data)?;
    let stats = InputStats::from_windows(&ds.train);
    let model = ModelParams::init(&cfg.model, &stats, cfg.train.seed);
    let report = train(model, &ds, &cfg.train)?;
    create_dir(out)?;
    let weights = out.join(WEIGHTS_FILE);
    let log = out.join(TRAIN_LOG_FILE);
    save_weights(&report.model, &weights)?;
    write_train_log(&log, &report.log)?;
    Ok(TrainSummary {
        iterations: report.log.len(),
        first_rmse: report.log.first().map_or(f64::NAN, |r| r.batch_rmse),
        final_rmse: report.log.last().map_or(f64::NAN, |r| r.batch_rmse),
        weights,
        log,
    })
}

fn load_model(cfg: &RunConfig, weights: &Path) -> Result<ModelParams> {
    if !weights.is_file() {
        bail!("weights file {} not found (run train first)", weights.display());
    }
    let model = load_weights(weights)?;
    let found = model.config();
    if found != cfg.model {
        bail!(
            "weights {} hold layers (encoder {}, latent {}, decoder {}, input norm {:?}) but the config expects \
             (encoder {}, latent {}, decoder {}, input norm {:?})",
            weights.display(),
            found.encoder_hidden,
            found.latent,
            found.decoder_hidden,
            found.input_norm,
            cfg.model.encoder_hidden,
            cfg.model.latent,
            cfg.model.decoder_hidden,
            cfg.model.input_norm
        );
    }
    Ok(model)
}

/// Counts per bin `[i w, (i + 1) w)` below `upper`, plus the number of
/// values at or above `upper`.
pub fn histogram(values: &[f64], width: f64, upper: f64) -> (Vec<usize>, usize) {
    let bins = (upper / width).round() as usize;
    let mut counts = vec![0; bins];
    let mut overflow = 0;
    for &v in values {
        let i = (v / width).floor();
        if i >= 0.0 && (i as usize) < bins {
            counts[i as usize] += 1;
        } else {
            overflow += 1;
        }
    }
    (counts, overflow)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub samples: usize,
    pub overall_rmse: f64,
    pub above_histogram: usize,
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} test samples, overall RMSE {:.4} m", self.samples, self.overall_rmse)?;
        if self.above_histogram > 0 {
            write!(f, " ({} samples at or above {HISTOGRAM_UPPER} m not binned)", self.above_histogram)?;
        }
        Ok(())
    }
}

pub fn cmd_eval(cfg: &RunConfig, weights: &Path, data: &Path, out: &Path) -> Result<EvalSummary> {
    cfg.validate()?;
    require_dataset(data)?;
    let model = load_model(cfg, weights)?;
    let ds = load_dataset(data)?;
    let report = evaluate(&model, &ds.test)?;
    create_dir(out)?;

    let mut w = csv_writer(&out.join(EVAL_SAMPLES_FILE))?;
    w.write_record(["sample", "source_v", "split_x", "rmse"])?;
    for (i, (win, rmse)) in ds.test.iter().zip(&report.per_sample).enumerate() {
        w.write_record([i.to_string(), win.source_v.to_string(), win.split_x.to_string(), rmse.to_string()])?;
    }
    w.flush()?;

    let (counts, overflow) = histogram(&report.per_sample, HISTOGRAM_BIN_WIDTH, HISTOGRAM_UPPER);
    let mut w = csv_writer(&out.join(EVAL_HISTOGRAM_FILE))?;
    w.write_record(["bin_start", "bin_end", "count"])?;
    for (i, c) in counts.iter().enumerate() {
        let lo = i as f64 * HISTOGRAM_BIN_WIDTH;
        w.write_record([lo.to_string(), (lo + HISTOGRAM_BIN_WIDTH).to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(EvalSummary { samples: ds.test.len(), overall_rmse: report.overall_rmse, above_histogram: overflow })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub steps: usize,
    pub min_margin: f64,
    pub max_slack: f64,
    pub min_ev_speed: f64,
    pub last_ev_speed: f64,
}

impl fmt::Display for SimSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} steps, min margin {:.4}, max slack {:.2e}, EV speed min {:.3} m/s, last {:.3} m/s",
            self.steps, self.min_margin, self.max_slack, self.min_ev_speed, self.last_ev_speed
        )
    }
}

pub fn cmd_simulate(cfg: &RunConfig, weights: &Path, out: &Path) -> Result<SimSummary> {
    cfg.validate()?;
    let model = load_model(cfg, weights)?;
    let log = run_closed_loop(&cfg.sim, &model)?;
    create_dir(out)?;
    write_sim_log(&out.join(SIM_LOG_FILE), &log)?;
    write_predictions(&out.join(PREDICTIONS_FILE), &log)?;
    let margins = log.steps.iter().map(|s| s.margin);
    let speeds = log.steps.iter().map(|s| s.ev.v);
    Ok(SimSummary {
        steps: log.steps.len(),
        min_margin: margins.fold(f64::INFINITY, f64::min),
        max_slack: log.steps.iter().map(|s| s.max_slack).fold(0.0, f64::max),
        min_ev_speed: speeds.fold(f64::INFINITY, f64::min),
        last_ev_speed: log.steps.last().map_or(f64::NAN, |s| s.ev.v),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSummary {
    pub path: PathBuf,
    pub steps: usize,
    pub predictions: usize,
}

impl fmt::Display for PlotSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "wrote {} ({} steps, {} predicted trajectories)", self.path.display(), self.steps, self.predictions)
    }
}

pub fn cmd_plot(cfg: &RunConfig, log: &Path, pred: &Path, out: &Path) -> Result<PlotSummary> {
    cfg.validate()?;
    let rows = read_sim_log(log)?;
    let predictions = read_predictions(pred)?;
    let svg = render_svg(&rows, &predictions, &cfg.sim)?;
    create_dir(out)?;
    let path = out.join(PLOT_FILE);
    fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
    Ok(PlotSummary { path, steps: rows.len(), predictions: predictions.len() })
}
