use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::integrate::TrajectoryHeader;
use super::{integrate, FaultEvent, GridModel, Trajectory};
use crate::error::{Error, Result};
use crate::numcore::{seeded, Tensor};

const META_FILE: &str = "dataset.json";

/// Train/test proportion, written `"9:2"` or as a fraction `"0.8"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Split {
    Ratio(usize, usize),
    Fraction(f64),
}

impl Default for Split {
    fn default() -> Self {
        Split::Ratio(9, 2)
    }
}

impl Split {
    pub fn train_fraction(self) -> f64 {
        match self {
            Split::Ratio(a, b) => a as f64 / (a + b) as f64,
            Split::Fraction(f) => f,
        }
    }

    /// Number of training trajectories out of `n`.
    pub fn n_train(self, n: usize) -> usize {
        ((n as f64 * self.train_fraction()).round() as usize).min(n)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Ratio(a, b) => write!(f, "{a}:{b}"),
            Split::Fraction(x) => write!(f, "{x}"),
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("invalid split {s:?}; expected \"9:2\" or a fraction"));
        let split = if let Some((a, b)) = s.split_once(':') {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a + b == 0 {
                return Err(bad());
            }
            Split::Ratio(a, b)
        } else {
            let f: f64 = s.trim().parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&f) {
                return Err(bad());
            }
            Split::Fraction(f)
        };
        Ok(split)
    }
}

impl Serialize for Split {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Split {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-bus mean and standard deviation of the training states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self> {
        let n = trajs
            .first()
            .map(Trajectory::n_bus)
            .ok_or_else(|| Error::InvalidArgument("normalization needs at least one trajectory".into()))?;
        let count: usize = trajs.iter().map(Trajectory::len).sum();
        let mut mean = vec![0.0; n];
        for tr in trajs {
            for k in 0..tr.len() {
                for (m, v) in mean.iter_mut().zip(tr.states.row_slice(k)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; n];
        for tr in trajs {
            for k in 0..tr.len() {
                for ((s, v), m) in var.iter_mut().zip(tr.states.row_slice(k)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Standardizes every row of a `T × n` matrix.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let n = self.mean.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % n;
            *v = (*v - self.mean[c]) / self.std[c];
        }
        out
    }

    /// Inverse of [`NormStats::apply`]; accepts delay-embedded rows too.
    pub fn invert(&self, x: &Tensor) -> Tensor {
        let n = self.mean.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % n;
            *v = *v * self.std[c] + self.mean[c];
        }
        out
    }
}

/// Generated trajectories plus everything needed to regenerate them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub model: GridModel,
    pub faults: Vec<FaultEvent>,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub split: Split,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub norm: NormStats,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: GridModel,
    faults: Vec<FaultEvent>,
    dt: f64,
    t_end: f64,
    seed: u64,
    split: Split,
    norm: NormStats,
    units: String,
    train: Vec<FileEntry>,
    test: Vec<FileEntry>,
}

#[derive(Serialize, Deserialize)]
struct FileEntry {
    file: String,
    #[serde(flatten)]
    header: TrajectoryHeader,
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("KOOPMAN_FLOW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// One trajectory per fault, shuffled by `seed` and split into train/test.
///
/// Trajectories are integrated in parallel; the result does not depend on
/// the thread count.
pub fn generate_dataset(
    model: &GridModel,
    faults: &[FaultEvent],
    seed: u64,
    dt: f64,
    t_end: f64,
    split: Split,
) -> Result<Dataset> {
    model.validate()?;
    if faults.is_empty() {
        return Err(Error::InvalidConfig("no fault events given".into()));
    }
    for f in faults {
        f.validate(model.n_bus(), t_end)?;
    }
    let trajs: Vec<Trajectory> = thread_pool()?.install(|| {
        faults
            .par_iter()
            .enumerate()
            .map(|(i, f)| {
                let mut tr = integrate(model, Some(f), dt, t_end)?;
                tr.id = format!("fault_{i:03}_bus{}", f.bus);
                Ok(tr)
            })
            .collect::<Result<_>>()
    })?;
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    order.shuffle(&mut seeded(seed));
    let n_train = split.n_train(trajs.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| trajs[i].clone()).collect::<Vec<_>>();
    let train = pick(&order[..n_train]);
    let test = pick(&order[n_train..]);
    let norm = if train.is_empty() {
        NormStats::identity(model.n_bus())
    } else {
        NormStats::from_trajectories(&train)?
    };
    Ok(Dataset {
        model: model.clone(),
        faults: faults.to_vec(),
        dt,
        t_end,
        seed,
        split,
        train,
        test,
        norm,
    })
}

impl Dataset {
    pub fn n_bus(&self) -> usize {
        self.model.n_bus()
    }

    /// Writes `dataset.json` and one CSV per trajectory under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let entries = |trajs: &[Trajectory], sub: &str| -> Result<Vec<FileEntry>> {
            fs::create_dir_all(dir.join(sub))?;
            trajs
                .iter()
                .map(|tr| {
                    let file = format!("{sub}/{}.csv", tr.id);
                    write_csv(tr, &dir.join(&file))?;
                    Ok(FileEntry {
                        file,
                        header: TrajectoryHeader {
                            id: tr.id.clone(),
                            dt: tr.dt,
                            fault: tr.fault,
                        },
                    })
                })
                .collect()
        };
        let meta = Meta {
            model: self.model.clone(),
            faults: self.faults.clone(),
            dt: self.dt,
            t_end: self.t_end,
            seed: self.seed,
            split: self.split,
            norm: self.norm.clone(),
            units: "frequency deviation, per unit".into(),
            train: entries(&self.train, "train")?,
            test: entries(&self.test, "test")?,
        };
        fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        if !meta_path.exists() {
            return Err(Error::MissingPath(meta_path));
        }
        let meta: Meta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
            .map_err(|e| Error::malformed(&meta_path, e.to_string()))?;
        let read = |entries: &[FileEntry]| -> Result<Vec<Trajectory>> {
            entries
                .iter()
                .map(|e| {
                    let states = read_csv(&dir.join(&e.file))?;
                    Ok(Trajectory {
                        id: e.header.id.clone(),
                        dt: e.header.dt,
                        states,
                        fault: e.header.fault,
                    })
                })
                .collect()
        };
        Ok(Self {
            train: read(&meta.train)?,
            test: read(&meta.test)?,
            model: meta.model,
            faults: meta.faults,
            dt: meta.dt,
            t_end: meta.t_end,
            seed: meta.seed,
            split: meta.split,
            norm: meta.norm,
        })
    }

    pub fn trajectory_paths(dir: &Path) -> Vec<PathBuf> {
        ["train", "test"]
            .iter()
            .flat_map(|s| fs::read_dir(dir.join(s)).into_iter().flatten().flatten())
            .map(|e| e.path())
            .collect()
    }
}

/// Header `t,bus_0,...`; 17 significant digits so values re-read bit-exactly.
pub fn write_csv(tr: &Trajectory, path: &Path) -> Result<()> {
    use std::fmt::Write as _;
    let n = tr.n_bus();
    let mut out = String::with_capacity(tr.len() * n * 25);
    out.push('t');
    for i in 0..n {
        let _ = write!(out, ",bus_{i}");
    }
    out.push('\n');
    for k in 0..tr.len() {
        let _ = write!(out, "{:.16e}", tr.time(k));
        for v in tr.states.row_slice(k) {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads the state columns of a trajectory CSV.
pub fn read_csv(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::malformed(path, "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") || cols.len() < 2 {
        return Err(Error::malformed(path, "header must start with t,bus_0"));
    }
    let n = cols.len() - 1;
    let mut data = Vec::new();
    let mut rows = 0;
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n + 1 {
            return Err(Error::malformed(
                path,
                format!("line {} has {} fields", ln + 2, fields.len()),
            ));
        }
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::malformed(path, format!("line {}: bad number {f:?}", ln + 2)))?;
            data.push(v);
        }
        rows += 1;
    }
    Tensor::new([rows, n], data)
}

/// Rows `[x_t | x_{t-1} | ... | x_{t-d+1}]` for `t = d-1 .. T-1`.
pub fn delay_embed(states: &Tensor, d: usize) -> Result<Tensor> {
    let (t, n) = (states.rows(), states.cols());
    if d == 0 {
        return Err(Error::InvalidArgument("delay depth must be >= 1".into()));
    }
    if t < d {
        return Err(Error::InvalidArgument(format!(
            "trajectory of length {t} is shorter than delay depth {d}"
        )));
    }
    let mut data = Vec::with_capacity((t - d + 1) * n * d);
    for row in d - 1..t {
        for lag in 0..d {
            data.extend_from_slice(states.row_slice(row - lag));
        }
    }
    Tensor::new([t - d + 1, n * d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridsim::fault_schedule;

    #[test]
    fn delay_embedding_hand_case() {
        let s = Tensor::from_rows(&[[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]]).unwrap();
        assert_eq!(delay_embed(&s, 1).unwrap(), s);
        let e = delay_embed(&s, 2).unwrap();
        assert_eq!(e.data(), &[2.0, 20.0, 1.0, 10.0, 3.0, 30.0, 2.0, 20.0]);
        assert!(delay_embed(&s, 4).is_err());
        assert!(delay_embed(&s, 0).is_err());
    }

    #[test]
    fn embedded_rows_overlap() {
        let s = Tensor::new([20, 3], (0..60).map(f64::from).collect()).unwrap();
        let e = delay_embed(&s, 4).unwrap();
        assert_eq!(e.shape(), &[17, 12]);
        for t in 0..16 {
            assert_eq!(&e.row_slice(t + 1)[3..6], &e.row_slice(t)[0..3]);
        }
    }

    #[test]
    fn split_parsing_and_counts() {
        assert_eq!("9:2".parse::<Split>().unwrap(), Split::Ratio(9, 2));
        assert_eq!("0.8".parse::<Split>().unwrap(), Split::Fraction(0.8));
        assert!("nine".parse::<Split>().is_err());
        assert!("1.5".parse::<Split>().is_err());
        assert_eq!(Split::default().n_train(11), 9);
        assert_eq!(Split::Ratio(90, 9).n_train(99), 90);
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let m = GridModel::ieee14(0);
        let faults = fault_schedule(14, 11, 0);
        let a = generate_dataset(&m, &faults, 7, 0.01, 2.0, Split::default()).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (9, 2));
        let b = generate_dataset(&m, &faults, 7, 0.01, 2.0, Split::default()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&m, &faults, 8, 0.01, 2.0, Split::default()).unwrap();
        assert_ne!(
            a.train.iter().map(|t| &t.id).collect::<Vec<_>>(),
            c.train.iter().map(|t| &t.id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn normalization_uses_train_only() {
        let m = GridModel::ieee14(0);
        let d = generate_dataset(&m, &fault_schedule(14, 4, 1), 3, 0.01, 2.0, Split::Ratio(1, 1)).unwrap();
        assert_eq!(d.norm, NormStats::from_trajectories(&d.train).unwrap());
        let z = d.norm.apply(&d.train[0].states);
        assert!(d.norm.invert(&z).max_abs_diff(&d.train[0].states) < 1e-15);
    }

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = GridModel::ieee14(2);
        let d = generate_dataset(&m, &fault_schedule(14, 3, 2), 1, 0.01, 1.0, Split::Ratio(2, 1)).unwrap();
        d.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, d);
        assert_eq!(Dataset::trajectory_paths(dir.path()).len(), 3);
        let text = fs::read_to_string(dir.path().join(format!("train/{}.csv", d.train[0].id))).unwrap();
        assert!(text.starts_with("t,bus_0,bus_1,"));
    }

    #[test]
    fn malformed_csv_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "t,bus_0\n0.1,abc\n").unwrap();
        assert!(matches!(read_csv(&p), Err(Error::Malformed { .. })));
        assert!(matches!(
            read_csv(&dir.path().join("none.csv")),
            Err(Error::MissingPath(_))
        ));
    }
}
