use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::data::{snapshot_pairs, ExperimentData, Preparation};
use super::eval::{evaluate, predict_trajectory, EvalOptions, EvalReport};
use super::train::{history_csv, train, HistoryRow};
use crate::error::{Error, Result};
use crate::flows::{ArchName, Checkpoint};
use crate::gridsim::Dataset;
use crate::koopman::{edmd_fit, KoopmanModel};
use crate::numcore::{seeded, ParamStore};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const HISTORY_FILE: &str = "history.csv";

impl ExperimentConfig {
    pub fn preparation(&self) -> Preparation {
        Preparation {
            delay: self.delay,
            subsample: self.subsample,
            crop_to_post_fault: self.crop_to_post_fault,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            teacher_forcing_interval: self.teacher_forcing_interval,
        }
    }
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let ds = Dataset::load(&cfg.dataset)?;
    ExperimentData::from_dataset(&ds, cfg.preparation())
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub report: EvalReport,
    pub history: Vec<HistoryRow>,
}

/// Trains, evaluates and writes the run directory named by the config hash.
pub fn run_training(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let out = train(cfg, &data)?;
    let (mut report, _) = evaluate(&out.model, &out.store, &data, cfg.eval_options())?;
    report.epochs = cfg.epochs;
    report.best_epoch = out.best_epoch;

    let dir = cfg.run_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_json())?;
    out.model.checkpoint(&out.store).save(&dir.join(CHECKPOINT_FILE))?;
    write_report(&dir, &report)?;
    fs::write(dir.join(HISTORY_FILE), history_csv(&out.history))?;
    Ok(RunOutput {
        dir,
        report,
        history: out.history,
    })
}

pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::write(dir.join(REPORT_JSON), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join(REPORT_CSV), report.csv())?;
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<EvalReport> {
    let path = dir.join(REPORT_JSON);
    if !path.exists() {
        return Err(Error::MissingPath(path));
    }
    serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| Error::malformed(&path, e.to_string()))
}

/// A finished run reloaded from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub config: ExperimentConfig,
    pub model: KoopmanModel,
    pub store: ParamStore,
    pub data: ExperimentData,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let ck_path = dir.join(CHECKPOINT_FILE);
    if !ck_path.exists() {
        return Err(Error::MissingPath(ck_path));
    }
    let (model, store) = KoopmanModel::from_checkpoint(&Checkpoint::load(&ck_path)?)?;
    let data = load_data(&config)?;
    if data.embed_dim() != model.state_dim() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint expects state size {}, dataset gives {}",
            model.state_dim(),
            data.embed_dim()
        )));
    }
    Ok(LoadedRun {
        config,
        model,
        store,
        data,
    })
}

/// Re-evaluates a run directory; `opts` overrides the stored evaluation settings.
pub fn evaluate_run(dir: &Path, opts: Option<EvalOptions>) -> Result<EvalReport> {
    let run = load_run(dir)?;
    let opts = opts.unwrap_or_else(|| run.config.eval_options());
    let (mut report, _) = evaluate(&run.model, &run.store, &run.data, opts)?;
    if let Ok(old) = read_report(dir) {
        report.epochs = old.epochs;
        report.best_epoch = old.best_epoch;
    }
    Ok(report)
}

/// Identity flow plus an optional randomly initialized extension, with `K`
/// fitted by EDMD on every consecutive training pair. No gradient training.
///
/// Uses `delay`, `extension`, `extension_dim`, `ridge`, `seed` and the
/// preparation fields of `cfg`; the architecture is ignored.
pub fn ablate(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let data = load_data(cfg)?;
    ablate_on(cfg, &data)
}

pub fn ablate_on(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<EvalReport> {
    let mut cfg = cfg.clone();
    cfg.architecture = ArchName::Identity;
    let spec = cfg.model_spec(data.embed_dim());
    let mut store = ParamStore::new();
    let model = KoopmanModel::build(&mut store, &spec)?;
    let train: Vec<_> = data.train.iter().map(|t| t.embedded.clone()).collect();
    if let Some(ext) = &model.encoder.extension {
        let states = data.train_states()?;
        ext.setup(&mut store, &states, &mut seeded(cfg.seed ^ 0xAB1A_7E00))?;
    }
    let encoded: Vec<_> = train
        .iter()
        .map(|t| model.encoder.encode_values(&store, t))
        .collect::<Result<_>>()?;
    let (z0, z1) = snapshot_pairs(&encoded)?;
    store.set(model.k, edmd_fit(&z0, &z1, cfg.ridge)?)?;
    let (report, _) = evaluate(&model, &store, data, cfg.eval_options())?;
    Ok(report)
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub extension: String,
    pub model: String,
    pub train: f64,
    pub test: f64,
    /// `Some('↑')` when lower (better) than the matching no-extension run,
    /// `Some('↓')` when higher.
    pub train_marker: Option<char>,
    pub test_marker: Option<char>,
}

fn marker(value: f64, baseline: f64) -> Option<char> {
    if value < baseline {
        Some('↑')
    } else if value > baseline {
        Some('↓')
    } else {
        None
    }
}

/// Expands each entry to itself if it holds a report, else to its
/// immediate subdirectories that do (sorted by name).
pub fn collect_run_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if !p.exists() {
            return Err(Error::MissingPath(p.clone()));
        }
        if p.join(REPORT_JSON).exists() {
            out.push(p.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(p)?
            .flatten()
            .map(|e| e.path())
            .filter(|d| d.join(REPORT_JSON).exists())
            .collect();
        if subs.is_empty() {
            return Err(Error::MissingPath(p.join(REPORT_JSON)));
        }
        subs.sort();
        out.extend(subs);
    }
    Ok(out)
}

pub fn compare_reports(reports: &[EvalReport]) -> Vec<CompareRow> {
    reports
        .iter()
        .map(|r| {
            let base = (r.extension != "none")
                .then(|| reports.iter().find(|b| b.extension == "none" && b.model == r.model))
                .flatten();
            CompareRow {
                extension: r.extension.clone(),
                model: r.model.clone(),
                train: r.rrmse_train,
                test: r.rrmse_test,
                train_marker: base.and_then(|b| marker(r.rrmse_train, b.rrmse_train)),
                test_marker: base.and_then(|b| marker(r.rrmse_test, b.rrmse_test)),
            }
        })
        .collect()
}

pub fn compare(paths: &[PathBuf]) -> Result<Vec<CompareRow>> {
    let reports = collect_run_dirs(paths)?
        .iter()
        .map(|d| read_report(d))
        .collect::<Result<Vec<_>>>()?;
    Ok(compare_reports(&reports))
}

fn cell(v: f64, m: Option<char>) -> String {
    match m {
        Some(c) => format!("{v:.2} {c}"),
        None => format!("{v:.2}"),
    }
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("extension,model,train_rrmse,train_marker,test_rrmse,test_marker\n");
    for r in rows {
        let m = |c: Option<char>| c.map(String::from).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.extension,
            r.model,
            r.train,
            m(r.train_marker),
            r.test,
            m(r.test_marker)
        ));
    }
    s
}

pub fn compare_text(rows: &[CompareRow]) -> String {
    let header = ["extension", "model", "train %", "test %"];
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.extension.clone(),
                r.model.clone(),
                cell(r.train, r.train_marker),
                cell(r.test, r.test_marker),
            ]
        })
        .collect();
    let mut width = header.map(|h| h.chars().count());
    for row in &body {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: [&str; 4]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(width)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut s = line(header);
    s.push_str(&line(width.map(|w| "-".repeat(w)).each_ref().map(String::as_str)));
    for row in &body {
        s.push_str(&line(row.each_ref().map(String::as_str)));
    }
    s
}

/// `(t, true, predicted)` for one bus of one trajectory, from the same
/// rollout used by evaluation.
pub fn plotdata(dir: &Path, trajectory: &str, bus: usize) -> Result<Vec<(f64, f64, f64)>> {
    let run = load_run(dir)?;
    let traj = run.data.find(trajectory).ok_or_else(|| Error::Unknown {
        kind: "trajectory",
        name: trajectory.to_string(),
    })?;
    if bus >= run.data.n_bus {
        return Err(Error::Unknown {
            kind: "bus",
            name: format!("{bus} (valid: 0..{})", run.data.n_bus),
        });
    }
    let p = predict_trajectory(&run.model, &run.store, &run.data, traj, run.config.eval_options())?;
    Ok(p.times
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, p.truth.get(i, bus), p.pred.get(i, bus)))
        .collect())
}

pub fn plotdata_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut s = String::from("t,true,predicted\n");
    for (t, a, b) in rows {
        s.push_str(&format!("{t},{a:.16e},{b:.16e}\n"));
    }
    s
}
