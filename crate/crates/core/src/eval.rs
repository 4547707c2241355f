//! Error rates, repeated seeded trials and decision-boundary rasters.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::conv::ConvLdnn;
use crate::data::{gen_two_moons, Dataset, MoonsParams};
use crate::dnf::DiscreteDnf;
use crate::error::{check_len, LdnnError, Result};
use crate::init::{farthest_distance_clustering, InitMode};
use crate::model::{LdnnModel, MulticlassModel};
use crate::modn::{train_modn, ModnModel};
use crate::seed::derive_seed;
use crate::train::{fit, TrainConfig};

/// Anything that maps an input vector to a class index.
pub trait Classifier {
    fn inputs(&self) -> usize;
    fn classify(&self, x: &[f64]) -> Result<usize>;
}

impl Classifier for LdnnModel {
    fn inputs(&self) -> usize {
        LdnnModel::inputs(self)
    }

    fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(usize::from(self.predict(x)?))
    }
}

impl Classifier for MulticlassModel {
    fn inputs(&self) -> usize {
        MulticlassModel::inputs(self)
    }

    fn classify(&self, x: &[f64]) -> Result<usize> {
        self.predict(x)
    }
}

impl Classifier for ModnModel {
    fn inputs(&self) -> usize {
        self.grid().inputs()
    }

    fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(usize::from(ModnModel::classify(self, x)?.1))
    }
}

impl Classifier for DiscreteDnf {
    fn inputs(&self) -> usize {
        self.halfspaces().inputs()
    }

    fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(usize::from(DiscreteDnf::classify(self, x)?))
    }
}

impl Classifier for ConvLdnn {
    fn inputs(&self) -> usize {
        self.stack.input_len()
    }

    fn classify(&self, x: &[f64]) -> Result<usize> {
        self.predict(x)
    }
}

/// Percentage of misclassified rows.
pub fn error_rate<C: Classifier + ?Sized>(model: &C, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(LdnnError::param("cannot measure error on an empty dataset"));
    }
    check_len("classifier inputs", model.inputs(), data.dim())?;
    let mut wrong = 0usize;
    for (x, &label) in data.rows().zip(data.labels()) {
        if model.classify(x)? != label {
            wrong += 1;
        }
    }
    Ok(100.0 * wrong as f64 / data.len() as f64)
}

/// Outcome of one seeded trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub seed: u64,
    pub train_error: f64,
    pub test_error: f64,
    pub epochs: usize,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// A trial that stopped with a divergence error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Summary { mean, min, max })
    }
}

/// Per-trial results ordered by seed, with aggregates over the trials that
/// completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub name: String,
    pub base_seed: u64,
    pub trials: Vec<Trial>,
    pub failed: Vec<FailedTrial>,
    pub train_error: Summary,
    pub test_error: Summary,
    pub epochs: Summary,
}

impl TrialReport {
    fn from_outcomes(name: &str, base_seed: u64, outcomes: Vec<(u64, Result<Trial>)>) -> Result<Self> {
        let mut trials = Vec::new();
        let mut failed = Vec::new();
        for (seed, outcome) in outcomes {
            match outcome {
                Ok(t) => trials.push(t),
                Err(e @ LdnnError::Divergence { .. }) => failed.push(FailedTrial {
                    seed,
                    message: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
        let column = |f: fn(&Trial) -> f64| Summary::of(&trials.iter().map(f).collect::<Vec<_>>());
        let (Some(train_error), Some(test_error), Some(epochs)) = (
            column(|t| t.train_error),
            column(|t| t.test_error),
            column(|t| t.epochs as f64),
        ) else {
            let first = failed.first().map_or(String::new(), |f| f.message.clone());
            return Err(LdnnError::Divergence {
                epoch: 0,
                stage: name.to_string(),
                detail: format!("all {} trials diverged; first: {first}", failed.len()),
            });
        };
        Ok(TrialReport {
            name: name.to_string(),
            base_seed,
            trials,
            failed,
            train_error,
            test_error,
            epochs,
        })
    }

    pub fn wall_time(&self) -> Duration {
        self.trials.iter().map(|t| t.wall_time).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned per-trial table followed by the aggregate rows.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.name);
        let _ = writeln!(out, "{:>20} {:>10} {:>10} {:>8}", "seed", "train %", "test %", "epochs");
        for t in &self.trials {
            let _ = writeln!(
                out,
                "{:>20} {:>10.3} {:>10.3} {:>8}",
                t.seed, t.train_error, t.test_error, t.epochs
            );
        }
        for f in &self.failed {
            let _ = writeln!(out, "{:>20} diverged: {}", f.seed, f.message);
        }
        for (label, pick) in [
            ("mean", (|s: &Summary| s.mean) as fn(&Summary) -> f64),
            ("min", |s: &Summary| s.min),
            ("max", |s: &Summary| s.max),
        ] {
            let _ = writeln!(
                out,
                "{:>20} {:>10.3} {:>10.3} {:>8.1}",
                label,
                pick(&self.train_error),
                pick(&self.test_error),
                pick(&self.epochs)
            );
        }
        out
    }
}

impl fmt::Display for TrialReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

/// Runs `trial(base_seed + k)` for `k in 0..repetitions` on up to `jobs`
/// threads. Results are ordered by seed regardless of completion order.
/// Divergent trials are recorded and left out of the aggregates; any other
/// error aborts the run.
pub fn run_trials<F>(name: &str, repetitions: usize, base_seed: u64, jobs: usize, trial: F) -> Result<TrialReport>
where
    F: Fn(u64) -> Result<Trial> + Sync,
{
    if repetitions == 0 {
        return Err(LdnnError::param("repetitions must be at least 1"));
    }
    let seeds: Vec<u64> = (0..repetitions as u64).map(|k| base_seed.wrapping_add(k)).collect();
    let jobs = jobs.clamp(1, repetitions);
    let outcomes = if jobs == 1 {
        seeds.iter().map(|&s| (s, trial(s))).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<Trial>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    if k >= seeds.len() {
                        break;
                    }
                    let outcome = trial(seeds[k]);
                    *slots[k].lock().expect("slot lock") = Some(outcome);
                });
            }
        });
        seeds
            .iter()
            .zip(slots)
            .map(|(&s, slot)| (s, slot.into_inner().expect("slot lock").expect("every trial ran")))
            .collect()
    };
    TrialReport::from_outcomes(name, base_seed, outcomes)
}

/// Which network a benchmark trial trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    LdnnRandom,
    LdnnCluster,
    Modn,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 3] = [BenchMethod::LdnnRandom, BenchMethod::LdnnCluster, BenchMethod::Modn];

    pub fn label(self) -> &'static str {
        match self {
            BenchMethod::LdnnRandom => "LDNN random init",
            BenchMethod::LdnnCluster => "LDNN cluster init",
            BenchMethod::Modn => "ModN",
        }
    }
}

const TRAIN_DATA_TAG: u64 = 40;
const TEST_DATA_TAG: u64 = 41;

/// An `n x n` network on freshly drawn two-moons data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoonsBench {
    pub moons: MoonsParams,
    /// Points per moon in the independent test set.
    pub test_count: usize,
    pub size: usize,
    pub method: BenchMethod,
    pub restarts: usize,
    pub train: TrainConfig,
    /// When set, every trial uses the train/test sets drawn from this seed;
    /// otherwise each trial draws its own from the trial seed.
    pub data_seed: Option<u64>,
}

impl MoonsBench {
    pub fn init_mode(&self) -> InitMode {
        match self.method {
            BenchMethod::LdnnRandom => InitMode::Random {
                groups: self.size,
                per_group: self.size,
            },
            BenchMethod::LdnnCluster | BenchMethod::Modn => InitMode::Kmeans {
                groups: self.size,
                per_group: self.size,
                restarts: self.restarts,
            },
        }
    }

    /// Train and test sets for the trial with `seed`.
    pub fn datasets(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let base = self.data_seed.unwrap_or(seed);
        let train = gen_two_moons(&self.moons, derive_seed(base, TRAIN_DATA_TAG))?;
        let test_params = MoonsParams {
            count: self.test_count,
            ..self.moons
        };
        let test = gen_two_moons(&test_params, derive_seed(base, TEST_DATA_TAG))?;
        Ok((train, test))
    }

    /// One trial; initialization and shuffling derive from `seed`.
    pub fn run(&self, seed: u64) -> Result<Trial> {
        let start = Instant::now();
        let (train, test) = self.datasets(seed)?;
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let init = self.init_mode();
        let (train_error, test_error, epochs) = match self.method {
            BenchMethod::LdnnRandom | BenchMethod::LdnnCluster => {
                let (model, history) = fit(&train, &init, &cfg)?;
                (error_rate(&model, &train)?, error_rate(&model, &test)?, history.epochs.len())
            }
            BenchMethod::Modn => {
                let model = train_modn(&train, &init, &cfg)?;
                (error_rate(&model, &train)?, error_rate(&model, &test)?, cfg.schedule().len())
            }
        };
        Ok(Trial {
            seed,
            train_error,
            test_error,
            epochs,
            wall_time: start.elapsed(),
        })
    }

    pub fn name(&self) -> String {
        format!("two moons, {0}x{0} {1}", self.size, self.method.label())
    }

    pub fn run_trials(&self, repetitions: usize, base_seed: u64, jobs: usize) -> Result<TrialReport> {
        run_trials(&self.name(), repetitions, base_seed, jobs, |s| self.run(s))
    }
}

/// One row of a size-by-method results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub size: usize,
    pub reports: Vec<(BenchMethod, TrialReport)>,
}

/// Test-error mean/min/max per network size and method.
pub fn results_table(rows: &[TableRow]) -> String {
    let mut out = String::new();
    let methods: Vec<BenchMethod> = rows
        .first()
        .map(|r| r.reports.iter().map(|(m, _)| *m).collect())
        .unwrap_or_default();
    let _ = write!(out, "{:>6}", "n");
    for m in &methods {
        let _ = write!(out, " | {:^26}", m.label());
    }
    out.push('\n');
    let _ = write!(out, "{:>6}", "");
    for _ in &methods {
        let _ = write!(out, " | {:>8}{:>9}{:>9}", "mean", "min", "max");
    }
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{:>6}", row.size);
        for (_, r) in &row.reports {
            let s = r.test_error;
            let _ = write!(out, " | {:>8.2}{:>9.2}{:>9.2}", s.mean, s.min, s.max);
        }
        out.push('\n');
    }
    out
}

/// Farthest-first cluster counts of each class at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterCount {
    pub threshold: f64,
    pub positive: usize,
    pub negative: usize,
}

/// Cluster counts for thresholds `start, start - step, ...` down to `stop`.
pub fn threshold_scan(data: &Dataset, start: f64, stop: f64, step: f64) -> Result<Vec<ClusterCount>> {
    data.require_binary()?;
    if !(step > 0.0) || !(stop > 0.0) || start < stop {
        return Err(LdnnError::param("scan needs step > 0 and start >= stop > 0"));
    }
    let positives = data.class_rows(1);
    let negatives = data.class_rows(0);
    let steps = ((start - stop) / step + 1e-9).floor() as usize;
    (0..=steps)
        .map(|k| {
            let threshold = start - k as f64 * step;
            Ok(ClusterCount {
                threshold,
                positive: farthest_distance_clustering(&positives, threshold)?.len(),
                negative: farthest_distance_clustering(&negatives, threshold)?.len(),
            })
        })
        .collect()
}

/// LDNN and ModN trained from the same farthest-first initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralsOutcome {
    pub threshold: f64,
    pub groups: usize,
    pub per_group: usize,
    pub ldnn_train_error: f64,
    /// First epoch whose online training error was zero.
    pub ldnn_first_zero_epoch: Option<usize>,
    pub modn_train_error: f64,
}

pub fn run_spirals(data: &Dataset, threshold: f64, cfg: &TrainConfig) -> Result<SpiralsOutcome> {
    let init = InitMode::Farthest { threshold };
    let (model, history) = fit(data, &init, cfg)?;
    let modn = train_modn(data, &init, cfg)?;
    Ok(SpiralsOutcome {
        threshold,
        groups: model.groups(),
        per_group: model.per_group(),
        ldnn_train_error: error_rate(&model, data)?,
        ldnn_first_zero_epoch: history.epochs.iter().find(|e| e.train_error == 0.0).map(|e| e.epoch),
        modn_train_error: error_rate(&modn, data)?,
    })
}

/// Axis-aligned lattice over the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Points per axis.
    pub resolution: usize,
}

impl Lattice {
    fn coordinate(range: (f64, f64), k: usize, resolution: usize) -> f64 {
        if resolution == 1 {
            return range.0;
        }
        range.0 + (range.1 - range.0) * k as f64 / (resolution - 1) as f64
    }

    /// Coordinates of row `r`, column `c`. Row 0 is the top (largest y).
    pub fn point(&self, r: usize, c: usize) -> [f64; 2] {
        [
            Lattice::coordinate(self.x_range, c, self.resolution),
            Lattice::coordinate((self.y_range.1, self.y_range.0), r, self.resolution),
        ]
    }

    /// Cell containing `p`, if inside the lattice bounds.
    pub fn nearest(&self, p: &[f64]) -> Option<(usize, usize)> {
        let span = |range: (f64, f64), v: f64| {
            let t = (v - range.0) / (range.1 - range.0);
            if !(0.0..=1.0).contains(&t) {
                return None;
            }
            Some((t * (self.resolution - 1) as f64).round() as usize)
        };
        let c = span(self.x_range, p[0])?;
        let r = self.resolution - 1 - span(self.y_range, p[1])?;
        Some((r, c))
    }
}

/// Network output over a lattice, row-major with the top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRaster {
    pub lattice: Lattice,
    pub f: Vec<f64>,
    /// `f >= 0.5`.
    pub mask: Vec<bool>,
    /// Per-conjunction outputs `g_i`, one grid per group.
    pub conjunctions: Vec<Vec<f64>>,
}

/// Evaluates a 2-input model on every lattice point.
pub fn rasterize_boundary(model: &LdnnModel, lattice: Lattice) -> Result<BoundaryRaster> {
    if model.inputs() != 2 {
        return Err(LdnnError::param(format!(
            "boundary rasters need a 2-input model, got {} inputs",
            model.inputs()
        )));
    }
    let Lattice {
        x_range,
        y_range,
        resolution,
    } = lattice;
    if resolution < 2 || !(x_range.0 < x_range.1) || !(y_range.0 < y_range.1) {
        return Err(LdnnError::param("lattice needs resolution >= 2 and increasing ranges"));
    }
    let cells = resolution * resolution;
    let mut f = Vec::with_capacity(cells);
    let mut conjunctions = vec![Vec::with_capacity(cells); model.groups()];
    for r in 0..resolution {
        for c in 0..resolution {
            let trace = model.forward(&lattice.point(r, c))?;
            f.push(trace.f);
            for (grid, &g) in conjunctions.iter_mut().zip(&trace.g) {
                grid.push(g);
            }
        }
    }
    let mask = f.iter().map(|&v| v >= 0.5).collect();
    Ok(BoundaryRaster {
        lattice,
        f,
        mask,
        conjunctions,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| LdnnError::io(path, e))
}

/// Binary 8-bit PGM (P5) of values in `[0, 1]`, scaled to `0..=255`.
pub fn write_pgm(path: impl AsRef<Path>, values: &[f64], width: usize, height: usize) -> Result<()> {
    check_len("pgm pixels", width * height, values.len())?;
    let path = path.as_ref();
    let mut out = create(path)?;
    let pixels: Vec<u8> = values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    write!(out, "P5\n{width} {height}\n255\n")
        .and_then(|_| out.write_all(&pixels))
        .and_then(|_| out.flush())
        .map_err(|e| LdnnError::io(path, e))
}

/// Raw grid values as CSV, one lattice row per line.
pub fn write_grid_csv(path: impl AsRef<Path>, values: &[f64], width: usize) -> Result<()> {
    if width == 0 || values.len() % width != 0 {
        return Err(LdnnError::shape("csv grid width", width, values.len()));
    }
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| LdnnError::io(path, e.into()))?;
    for row in values.chunks(width) {
        writer
            .write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(|e| LdnnError::io(path, e.into()))?;
    }
    writer.flush().map_err(|e| LdnnError::io(path, e))
}

impl BoundaryRaster {
    pub fn width(&self) -> usize {
        self.lattice.resolution
    }

    pub fn mask_values(&self) -> Vec<f64> {
        self.mask.iter().map(|&m| f64::from(u8::from(m))).collect()
    }

    /// Writes `<stem>.pgm`, `<stem>.csv`, `<stem>_mask.pgm` and one
    /// `<stem>_g<i>.pgm` per conjunction into `dir`.
    pub fn write_all(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let w = self.width();
        write_pgm(dir.join(format!("{stem}.pgm")), &self.f, w, w)?;
        write_grid_csv(dir.join(format!("{stem}.csv")), &self.f, w)?;
        write_pgm(dir.join(format!("{stem}_mask.pgm")), &self.mask_values(), w, w)?;
        for (i, g) in self.conjunctions.iter().enumerate() {
            write_pgm(dir.join(format!("{stem}_g{i}.pgm")), g, w, w)?;
        }
        Ok(())
    }
}
