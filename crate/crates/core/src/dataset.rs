//! Windowed (history, future) samples cut from lane-change paths.
//!
//! On-disk layout is a directory holding `train.csv`, `test.csv` and
//! `meta.json`. Each CSV row is one window: `source_v, split_x, split_y`,
//! then the history `(x, y)` pairs, then the future pairs. Floats are written
//! in shortest round-trip form, so loading reproduces every bit.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lanegen::LanePath;

/// History and future length used throughout.
pub const WINDOW: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    pub history: Vec<(f64, f64)>,
    pub future: Vec<(f64, f64)>,
    /// Longitudinal coordinate of `future[0]` in the source path.
    pub split_x: f64,
    pub split_y: f64,
    pub source_v: f64,
}

impl TrajectoryWindow {
    pub fn window_len(&self) -> usize {
        self.history.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<TrajectoryWindow>,
    pub test: Vec<TrajectoryWindow>,
    pub seed: u64,
}

impl SplitDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cuts `len - 2m` windows of `2m` consecutive points, start offsets
/// `0..len - 2m`.
pub fn segment_path(path: &LanePath, m: usize) -> Result<Vec<TrajectoryWindow>> {
    let n = path.points.len();
    if m == 0 || n <= 2 * m {
        return Err(Error::PathTooShort { len: n, needed: 2 * m, window: m });
    }
    Ok((0..n - 2 * m)
        .map(|start| {
            let history = path.points[start..start + m].to_vec();
            let future = path.points[start + m..start + 2 * m].to_vec();
            let (split_x, split_y) = future[0];
            TrajectoryWindow { history, future, split_x, split_y, source_v: path.v }
        })
        .collect())
}

/// Shifts every longitudinal coordinate so the splitting point sits at `x = 0`.
///
/// The shift is read from `future[0]`, so a second application is a no-op;
/// `split_x` keeps the original offset.
pub fn calibrate(window: &TrajectoryWindow) -> TrajectoryWindow {
    let shift = window.future[0].0;
    let shifted = |pts: &[(f64, f64)]| pts.iter().map(|&(x, y)| (x - shift, y)).collect();
    TrajectoryWindow {
        history: shifted(&window.history),
        future: shifted(&window.future),
        ..window.clone()
    }
}

/// Seeded shuffle followed by a `floor(ratio * L)` train prefix.
///
/// The permutation comes from ChaCha8 seeded with `seed` via
/// `SeedableRng::seed_from_u64`, fed to `SliceRandom::shuffle`.
pub fn split_and_shuffle(mut windows: Vec<TrajectoryWindow>, ratio: f64, seed: u64) -> Result<SplitDataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    windows.shuffle(&mut rng);
    let n_train = (ratio * windows.len() as f64).floor() as usize;
    let test = windows.split_off(n_train);
    Ok(SplitDataset { train: windows, test, seed })
}

/// Segments and calibrates every path of a corpus, in corpus order.
pub fn windows_from_corpus(corpus: &[LanePath], m: usize) -> Result<Vec<TrajectoryWindow>> {
    let mut out = Vec::new();
    for path in corpus {
        out.extend(segment_path(path, m)?.iter().map(calibrate));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: u32,
    seed: u64,
    window: usize,
    train: usize,
    test: usize,
}

const FORMAT_VERSION: u32 = 1;

pub fn csv_header(m: usize) -> Vec<String> {
    let mut cols = vec!["source_v".to_string(), "split_x".into(), "split_y".into()];
    for part in ["h", "f"] {
        for i in 0..m {
            cols.push(format!("{part}{i}_x"));
            cols.push(format!("{part}{i}_y"));
        }
    }
    cols
}

fn write_windows(path: &Path, windows: &[TrajectoryWindow], m: usize) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(csv_header(m))?;
    let mut row = Vec::with_capacity(3 + 4 * m);
    for win in windows {
        row.clear();
        row.extend([win.source_v, win.split_x, win.split_y].iter().map(f64::to_string));
        for &(x, y) in win.history.iter().chain(&win.future) {
            row.push(x.to_string());
            row.push(y.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_windows(path: &Path, m: usize) -> Result<Vec<TrajectoryWindow>> {
    let parse_err = |line: u64, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_path(path)?;
    let mut records = rdr.records();
    let expected = csv_header(m);
    match records.next() {
        None => return Err(parse_err(1, "empty file, expected a header row".into())),
        Some(header) => {
            let header = header?;
            if header.iter().ne(expected.iter().map(String::as_str)) {
                return Err(parse_err(1, format!("header does not match a window size of {m}")));
            }
        }
    }
    let mut out = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i as u64 + 2, |p| p.line());
        if rec.len() != expected.len() {
            let points = rec.len().saturating_sub(3) / 2;
            return Err(parse_err(
                line,
                format!("record {} has {} fields ({points} points), expected {} ({} points)", i + 1, rec.len(), expected.len(), 2 * m),
            ));
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(col, s)| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(line, format!("column `{}`: {e} ({s:?})", expected[col])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let pts: Vec<(f64, f64)> = vals[3..].chunks_exact(2).map(|c| (c[0], c[1])).collect();
        out.push(TrajectoryWindow {
            source_v: vals[0],
            split_x: vals[1],
            split_y: vals[2],
            history: pts[..m].to_vec(),
            future: pts[m..].to_vec(),
        });
    }
    Ok(out)
}

pub fn train_csv(dir: &Path) -> PathBuf {
    dir.join("train.csv")
}

pub fn test_csv(dir: &Path) -> PathBuf {
    dir.join("test.csv")
}

/// Writes `train.csv`, `test.csv` and `meta.json` into `dir`, creating it.
pub fn save_dataset(ds: &SplitDataset, dir: &Path) -> Result<()> {
    let m = ds.train.first().or(ds.test.first()).map_or(WINDOW, TrajectoryWindow::window_len);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_windows(&train_csv(dir), &ds.train, m)?;
    write_windows(&test_csv(dir), &ds.test, m)?;
    let meta = Meta { format: FORMAT_VERSION, seed: ds.seed, window: m, train: ds.train.len(), test: ds.test.len() };
    let meta_path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}

pub fn load_dataset(dir: &Path) -> Result<SplitDataset> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { path: meta_path.clone(), line: e.line() as u64, message: e.to_string() })?;
    if meta.format != FORMAT_VERSION {
        return Err(Error::Parse { path: meta_path, line: 1, message: format!("unsupported format {}", meta.format) });
    }
    let train = read_windows(&train_csv(dir), meta.window)?;
    let test = read_windows(&test_csv(dir), meta.window)?;
    for (path, got, want) in [(train_csv(dir), train.len(), meta.train), (test_csv(dir), test.len(), meta.test)] {
        if got != want {
            return Err(Error::Parse { path, line: got as u64 + 1, message: format!("{got} records, meta.json declares {want}") });
        }
    }
    if train.is_empty() && test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(SplitDataset { train, test, seed: meta.seed })
}
