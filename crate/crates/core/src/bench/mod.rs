//! Experiment grid, training runs and metrics persistence.
//!
//! Each run writes its per-epoch records to `runs/<run_id>.csv.partial`,
//! flushing after every epoch, and renames the file to `runs/<run_id>.csv`
//! once the last epoch is on disk. A completed run is reused unless the
//! caller asks for an overwrite. `metrics.csv` is assembled from completed
//! runs, sorted by run id.

pub mod plot;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{filter_and_split, RawDataset, DEFAULT_CLASSES};
use crate::error::{Error, Result};
use crate::models::{evaluate, train_step, Algo, HybridModel, ModelConfig};
use crate::nn::Adam;
use crate::templates::{EntanglerKind, MAX_LAYERS};

pub const METRICS_HEADER: [&str; 11] = [
    "run_id",
    "algo",
    "entangler",
    "layers",
    "qubits",
    "seed",
    "epoch",
    "train_loss",
    "train_acc",
    "test_acc",
    "wall_ms",
];
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RUNS_DIR: &str = "runs";
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

/// Optimizer and sampling hyperparameters shared by every cell of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self { epochs: 5, batch_size: 5, learning_rate: 0.01, n_train: 100, n_test: 100 }
    }
}

impl TrainingSettings {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("train and test sample counts must be positive".into()));
        }
        Ok(())
    }

    /// Optimizer steps per epoch, counting a trailing partial batch.
    pub fn steps_per_epoch(&self) -> usize {
        self.n_train.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentGrid {
    pub algos: Vec<Algo>,
    pub entanglers: Vec<EntanglerKind>,
    pub layer_counts: Vec<usize>,
    pub qubit_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub training: TrainingSettings,
}

impl ExperimentGrid {
    /// Every algorithm and entangler, 1 to 6 layers, 4, 8 and 9 qubits.
    /// Cells that fail validation are dropped during expansion.
    pub fn full(seeds: Vec<u64>, training: TrainingSettings) -> Self {
        Self {
            algos: Algo::ALL.to_vec(),
            entanglers: EntanglerKind::ALL.to_vec(),
            layer_counts: (1..=MAX_LAYERS).collect(),
            qubit_counts: vec![4, 8, 9],
            seeds,
            training,
        }
    }
}

/// Valid cells in expansion order, plus the rejected ones with the reason.
#[derive(Clone, Debug, PartialEq)]
pub struct GridExpansion {
    pub cells: Vec<ModelConfig>,
    pub skipped: Vec<(ModelConfig, String)>,
}

/// Cartesian product of the grid axes in the order algo, entangler, layers,
/// qubits, seed. Repeated axis values collapse to one cell.
pub fn expand_grid(grid: &ExperimentGrid) -> Result<GridExpansion> {
    if grid.algos.is_empty()
        || grid.entanglers.is_empty()
        || grid.layer_counts.is_empty()
        || grid.qubit_counts.is_empty()
        || grid.seeds.is_empty()
    {
        return Err(Error::Config("every grid axis needs at least one value".into()));
    }
    let mut seen = HashSet::new();
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for &algo in &grid.algos {
        for &entangler in &grid.entanglers {
            for &layers in &grid.layer_counts {
                for &qubits in &grid.qubit_counts {
                    for &seed in &grid.seeds {
                        let cfg = ModelConfig::new(algo, entangler, layers, qubits, seed);
                        if !seen.insert(cfg) {
                            continue;
                        }
                        match cfg.validate() {
                            Ok(()) => cells.push(cfg),
                            Err(e) => {
                                log::debug!("skipping {}: {e}", cfg.run_id());
                                skipped.push((cfg, e.to_string()));
                            }
                        }
                    }
                }
            }
        }
    }
    if !skipped.is_empty() {
        log::info!("grid: {} valid cells, {} invalid combinations skipped", cells.len(), skipped.len());
    }
    if cells.is_empty() {
        return Err(Error::Config("grid expands to no valid configuration".into()));
    }
    Ok(GridExpansion { cells, skipped })
}

/// Metrics after one epoch of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    #[serde(with = "text")]
    pub algo: Algo,
    #[serde(with = "text")]
    pub entangler: EntanglerKind,
    #[serde(rename = "layers")]
    pub n_layers: usize,
    #[serde(rename = "qubits")]
    pub n_qubits: usize,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Milliseconds since the start of the run.
    pub wall_ms: u64,
}

impl RunRecord {
    pub fn config(&self) -> ModelConfig {
        ModelConfig::new(self.algo, self.entangler, self.n_layers, self.n_qubits, self.seed)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.run_id != self.config().run_id() {
            return Err(format!("run_id '{}' does not match its config columns", self.run_id));
        }
        if self.epoch == 0 {
            return Err("epochs are numbered from 1".into());
        }
        for (name, v) in [("train_acc", self.train_acc), ("test_acc", self.test_acc)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !self.train_loss.is_finite() {
            return Err(format!("non-finite train_loss {}", self.train_loss));
        }
        Ok(())
    }
}

/// Serde through `Display` / `FromStr`, so CSV cells hold `quann`, `be`, ...
mod text {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, T: Display>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D, T>(d: D) -> Result<T, D::Error>
    where
        D: Deserializer<'de>,
        T: FromStr,
        T::Err: Display,
    {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Parse a metrics file. The header must match [`METRICS_HEADER`] exactly.
pub fn read_metrics(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    parse_metrics(file, &path.display().to_string())
}

pub fn parse_metrics<R: std::io::Read>(reader: R, name: &str) -> Result<Vec<RunRecord>> {
    let csv_err = |e: csv::Error| Error::Csv {
        line: e.position().map_or(0, |p| p.line()),
        msg: format!("{name}: {e}"),
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut row = csv::StringRecord::new();
    if !rdr.read_record(&mut row).map_err(csv_err)? {
        return Err(Error::Csv { line: 1, msg: format!("{name}: missing header") });
    }
    if row.iter().ne(METRICS_HEADER) {
        return Err(Error::Csv { line: 1, msg: format!("{name}: unexpected header") });
    }
    let header = row.clone();
    let mut records = Vec::new();
    while rdr.read_record(&mut row).map_err(csv_err)? {
        let line = row.position().map_or(0, |p| p.line());
        let rec: RunRecord = row
            .deserialize(Some(&header))
            .map_err(|e| Error::Csv { line, msg: format!("{name}: {e}") })?;
        rec.check().map_err(|msg| Error::Csv { line, msg: format!("{name}: {msg}") })?;
        records.push(rec);
    }
    Ok(records)
}

/// Write records with the metrics header, replacing `path` atomically.
pub fn write_metrics(path: &Path, records: &[RunRecord]) -> Result<()> {
    let tmp = with_suffix(path, ".tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        let io = |e: csv::Error| Error::io(format!("writing {}", tmp.display()), e.into());
        w.write_record(METRICS_HEADER).map_err(io)?;
        for r in records {
            w.serialize(r).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming {}", tmp.display()), e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Re-run and replace a completed run instead of reusing it.
    pub overwrite: bool,
    /// Also write per-batch loss and accuracy to `runs/<run_id>.batches.csv`.
    pub log_batches: bool,
}

pub fn run_csv_path(out_dir: &Path, run_id: &str) -> PathBuf {
    out_dir.join(RUNS_DIR).join(format!("{run_id}.csv"))
}

fn settings_path(out_dir: &Path, run_id: &str) -> PathBuf {
    out_dir.join(RUNS_DIR).join(format!("{run_id}.settings.json"))
}

/// Per-batch training metrics, written only when requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub run_id: String,
    pub epoch: usize,
    pub batch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
}

/// Records of a run, plus the trained model when training actually happened.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    /// `None` when a completed run was reused from disk.
    pub model: Option<HybridModel<f64>>,
}

/// Train one configuration and return its per-epoch records.
///
/// The train/test split, the parameter initialisation and the per-epoch
/// shuffle are all derived from `config.seed`.
pub fn run(
    config: &ModelConfig,
    settings: &TrainingSettings,
    raw: &RawDataset,
    out_dir: &Path,
    opts: RunOptions,
) -> Result<Vec<RunRecord>> {
    run_outcome(config, settings, raw, out_dir, opts).map(|o| o.records)
}

pub fn run_outcome(
    config: &ModelConfig,
    settings: &TrainingSettings,
    raw: &RawDataset,
    out_dir: &Path,
    opts: RunOptions,
) -> Result<RunOutcome> {
    config.validate()?;
    settings.validate()?;
    let run_id = config.run_id();
    let io = |what: &str, path: &Path, e: std::io::Error| {
        Error::io(format!("{run_id}: {what} {}", path.display()), e)
    };
    let runs_dir = out_dir.join(RUNS_DIR);
    fs::create_dir_all(&runs_dir).map_err(|e| io("creating", &runs_dir, e))?;
    let final_path = run_csv_path(out_dir, &run_id);
    let settings_file = settings_path(out_dir, &run_id);

    if final_path.exists() && !opts.overwrite {
        let stored: Option<TrainingSettings> = fs::read_to_string(&settings_file)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok());
        if stored.as_ref() == Some(settings) {
            log::info!("{run_id}: reusing completed run");
            return Ok(RunOutcome { records: read_metrics(&final_path)?, model: None });
        }
        return Err(Error::Config(format!(
            "{run_id}: a completed run with different settings exists; pass overwrite to replace it"
        )));
    }

    let (train, test) = filter_and_split(raw, &DEFAULT_CLASSES, settings.n_train, settings.n_test, config.seed)
        .map_err(|e| Error::Data(format!("{run_id}: {e}")))?;
    let train_samples = train.samples();
    let test_samples = test.samples();
    let mut model = HybridModel::<f64>::with_input_size(*config, raw.rows, raw.cols)?;
    let mut adam = Adam::new(settings.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let partial = with_suffix(&final_path, ".partial");
    let file = File::create(&partial).map_err(|e| io("creating", &partial, e))?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let csv_io = |e: csv::Error| io("writing", &partial, e.into());
    writer.write_record(METRICS_HEADER).map_err(csv_io)?;

    let mut batch_writer = if opts.log_batches {
        let path = out_dir.join(RUNS_DIR).join(format!("{run_id}.batches.csv"));
        let f = File::create(&path).map_err(|e| io("creating", &path, e))?;
        Some((csv::Writer::from_writer(f), path))
    } else {
        None
    };

    let start = Instant::now();
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut records = Vec::with_capacity(settings.epochs);
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0.0;
        for (b, chunk) in order.chunks(settings.batch_size).enumerate() {
            let batch: Vec<(&[f64], usize)> = chunk.iter().map(|&i| train_samples[i]).collect();
            let stats = train_step(&mut model, &mut adam, &batch)?;
            loss_sum += stats.loss * chunk.len() as f64;
            correct += stats.accuracy * chunk.len() as f64;
            if let Some((w, path)) = batch_writer.as_mut() {
                let rec = BatchRecord {
                    run_id: run_id.clone(),
                    epoch,
                    batch: b + 1,
                    train_loss: stats.loss,
                    train_acc: stats.accuracy,
                };
                w.serialize(rec).map_err(|e| io("writing", path, e.into()))?;
            }
        }
        let n = train_samples.len() as f64;
        let record = RunRecord {
            run_id: run_id.clone(),
            algo: config.algo,
            entangler: config.entangler,
            n_layers: config.n_layers,
            n_qubits: config.n_qubits,
            seed: config.seed,
            epoch,
            train_loss: loss_sum / n,
            train_acc: (correct / n).clamp(0.0, 1.0),
            test_acc: evaluate(&model, &test_samples)?,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        log::info!(
            "{run_id} epoch {epoch}: loss {:.4} train {:.3} test {:.3}",
            record.train_loss,
            record.train_acc,
            record.test_acc
        );
        writer.serialize(&record).map_err(csv_io)?;
        writer.flush().map_err(|e| io("writing", &partial, e))?;
        writer.get_ref().sync_data().map_err(|e| io("syncing", &partial, e))?;
        if let Some((w, path)) = batch_writer.as_mut() {
            w.flush().map_err(|e| io("writing", path, e))?;
        }
        records.push(record);
    }
    drop(writer);

    let json = serde_json::to_string_pretty(settings).expect("settings serialize");
    fs::write(&settings_file, json).map_err(|e| io("writing", &settings_file, e))?;
    fs::rename(&partial, &final_path).map_err(|e| io("finalising", &partial, e))?;
    Ok(RunOutcome { records, model: Some(model) })
}

/// Collect the completed runs for `run_ids`, sort them and write `metrics.csv`.
pub fn assemble_metrics(out_dir: &Path, run_ids: &[String]) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for id in run_ids {
        records.extend(read_metrics(&run_csv_path(out_dir, id))?);
    }
    records.sort_by(|a, b| a.run_id.cmp(&b.run_id).then(a.epoch.cmp(&b.epoch)));
    write_metrics(&out_dir.join(METRICS_FILE), &records)?;
    Ok(records)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridReport {
    pub expansion: GridExpansion,
    pub records: Vec<RunRecord>,
}

/// Run every valid cell of `grid`, `workers` cells at a time, then assemble
/// `metrics.csv` and `summary.csv` in `out_dir`.
pub fn run_grid(
    grid: &ExperimentGrid,
    raw: &RawDataset,
    out_dir: &Path,
    workers: usize,
    opts: RunOptions,
) -> Result<GridReport> {
    use rayon::prelude::*;

    let expansion = expand_grid(grid)?;
    grid.training.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let compute = rayon::ThreadPoolBuilder::new()
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        expansion
            .cells
            .par_iter()
            .map(|cfg| compute.install(|| run(cfg, &grid.training, raw, out_dir, opts)).map(drop))
            .collect::<Result<Vec<()>>>()
    })?;
    let ids: Vec<String> = expansion.cells.iter().map(ModelConfig::run_id).collect();
    let records = assemble_metrics(out_dir, &ids)?;
    write_summary(&out_dir.join(SUMMARY_FILE), &summarize(&records))?;
    Ok(GridReport { expansion, records })
}

/// Median of `values`; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Seed-aggregated metrics for one configuration at one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(with = "text")]
    pub algo: Algo,
    #[serde(with = "text")]
    pub entangler: EntanglerKind,
    pub layers: usize,
    pub qubits: usize,
    pub epoch: usize,
    pub n_seeds: usize,
    pub median_train_loss: f64,
    pub median_train_acc: f64,
    pub median_test_acc: f64,
}

impl fmt::Display for SummaryRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}-l{}-q{} epoch {}: test {:.3} (median of {})",
            self.algo, self.entangler, self.layers, self.qubits, self.epoch, self.median_test_acc, self.n_seeds
        )
    }
}

/// Group records by everything but the seed and take medians per epoch.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = format!("{}-{}-l{:02}-q{:02}", r.algo, r.entangler, r.n_layers, r.n_qubits);
        groups.entry((key, r.epoch)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let pick = |f: fn(&RunRecord) -> f64| median(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(f64::NAN);
            let r0 = rs[0];
            SummaryRow {
                algo: r0.algo,
                entangler: r0.entangler,
                layers: r0.n_layers,
                qubits: r0.n_qubits,
                epoch: r0.epoch,
                n_seeds: rs.len(),
                median_train_loss: pick(|r| r.train_loss),
                median_train_acc: pick(|r| r.train_acc),
                median_test_acc: pick(|r| r.test_acc),
            }
        })
        .collect()
}

/// Median test accuracy at the final epoch for the configuration matching
/// `algo`, `entangler`, `layers` and `qubits`, over whatever seeds are present.
pub fn final_median_accuracy(
    records: &[RunRecord],
    algo: Algo,
    entangler: EntanglerKind,
    layers: usize,
    qubits: usize,
) -> Option<f64> {
    let matching: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.algo == algo && r.entangler == entangler && r.n_layers == layers && r.n_qubits == qubits)
        .collect();
    let last = matching.iter().map(|r| r.epoch).max()?;
    median(&matching.iter().filter(|r| r.epoch == last).map(|r| r.test_acc).collect::<Vec<_>>())
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let io = |e: csv::Error| Error::io(format!("writing {}", path.display()), e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
