//! Cohort schema, CSV ingestion, padding, normalization, and synthetic cohorts.
//!
//! On-disk layout is three UTF-8 CSV files joined on `patient_id`:
//!
//! * `visits.csv`: `patient_id,visit_index,<dyn_1>,...,<dyn_c>`; an empty
//!   cell is a missing measurement.
//! * `static.csv`: `patient_id,<st_1>,...,<st_s>`.
//! * `labels.csv`: `patient_id,label` with integer labels `0..d`.
//!
//! Visit indices only order the visits; their spacing is ignored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_T_MAX: usize = 10;

/// One patient: visits `[t, c]`, static features, and class label.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitMatrix {
    pub patient_id: String,
    pub visits: Tensor,
    pub statics: Vec<f64>,
    pub label: usize,
}

impl VisitMatrix {
    pub fn visit_count(&self) -> usize {
        self.visits.rows()
    }

    pub fn feature_count(&self) -> usize {
        self.visits.cols()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.visit_count()).map(|r| self.visits.at(r, c)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub patients: Vec<VisitMatrix>,
    pub dynamic_names: Vec<String>,
    pub static_names: Vec<String>,
    pub classes: usize,
    /// Uniform visit count once [`pad_truncate`] has been applied.
    pub t_max: Option<usize>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.dynamic_names.iter().position(|n| n == name)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.patients.iter().map(|p| p.label).collect()
    }
}

/// Visit index and per-feature cells of one visits.csv row.
type RawVisit = (i64, Vec<Option<f64>>);

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn headers(reader: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Vec<String>> {
    Ok(reader
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(str::to_string)
        .collect())
}

fn expect_prefix(path: &Path, header: &[String], prefix: &[&str]) -> Result<()> {
    let ok = header.len() >= prefix.len() && header.iter().zip(prefix).all(|(h, p)| h == p);
    if !ok {
        return Err(Error::Data(format!(
            "{}: header must start with {}",
            path.display(),
            prefix.join(",")
        )));
    }
    Ok(())
}

fn parse_cell(path: &Path, line: u64, column: &str, cell: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| {
            Error::Data(format!(
                "{}: line {line}, column '{column}': cannot parse '{cell}' as a finite number",
                path.display()
            ))
        })
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Loads and joins the three cohort files.
pub fn load_cohort(visits_path: &Path, static_path: &Path, labels_path: &Path) -> Result<Cohort> {
    // labels: defines the patient set and its order
    let mut reader = open_csv(labels_path)?;
    let header = headers(&mut reader, labels_path)?;
    expect_prefix(labels_path, &header, &["patient_id", "label"])?;
    let mut order = Vec::new();
    let mut labels = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(labels_path, e))?;
        let line = record_line(&record);
        let id = record.get(0).unwrap_or("").to_string();
        let raw = record.get(1).unwrap_or("");
        let label = raw.parse::<usize>().map_err(|_| {
            Error::Data(format!(
                "{}: line {line}: label '{raw}' is not a non-negative integer",
                labels_path.display()
            ))
        })?;
        if labels.insert(id.clone(), label).is_some() {
            return Err(Error::Data(format!(
                "{}: line {line}: duplicate patient '{id}'",
                labels_path.display()
            )));
        }
        order.push(id);
    }
    if order.is_empty() {
        return Err(Error::Data(format!("{}: no patients", labels_path.display())));
    }

    // statics
    let mut reader = open_csv(static_path)?;
    let header = headers(&mut reader, static_path)?;
    expect_prefix(static_path, &header, &["patient_id"])?;
    let static_names: Vec<String> = header[1..].to_vec();
    let mut statics: HashMap<String, Vec<f64>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(static_path, e))?;
        let line = record_line(&record);
        let id = record.get(0).unwrap_or("").to_string();
        if !labels.contains_key(&id) {
            return Err(Error::Data(format!(
                "{}: line {line}: unknown patient '{id}'",
                static_path.display()
            )));
        }
        let mut row = Vec::with_capacity(static_names.len());
        for (j, name) in static_names.iter().enumerate() {
            let cell = record.get(j + 1).unwrap_or("");
            row.push(parse_cell(static_path, line, name, cell)?.unwrap_or(0.0));
        }
        statics.insert(id, row);
    }

    // visits
    let mut reader = open_csv(visits_path)?;
    let header = headers(&mut reader, visits_path)?;
    expect_prefix(visits_path, &header, &["patient_id", "visit_index"])?;
    let dynamic_names: Vec<String> = header[2..].to_vec();
    if dynamic_names.is_empty() {
        return Err(Error::Data(format!(
            "{}: no dynamic feature columns",
            visits_path.display()
        )));
    }
    let mut raw_visits: HashMap<String, Vec<RawVisit>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(visits_path, e))?;
        let line = record_line(&record);
        let id = record.get(0).unwrap_or("").to_string();
        if !labels.contains_key(&id) {
            return Err(Error::Data(format!(
                "{}: line {line}: unknown patient '{id}'",
                visits_path.display()
            )));
        }
        let raw_idx = record.get(1).unwrap_or("");
        let idx = raw_idx.parse::<i64>().map_err(|_| {
            Error::Data(format!(
                "{}: line {line}, column 'visit_index': '{raw_idx}' is not an integer",
                visits_path.display()
            ))
        })?;
        let mut row = Vec::with_capacity(dynamic_names.len());
        for (j, name) in dynamic_names.iter().enumerate() {
            row.push(parse_cell(visits_path, line, name, record.get(j + 2).unwrap_or(""))?);
        }
        raw_visits.entry(id).or_default().push((idx, row));
    }

    let c = dynamic_names.len();
    let mut patients = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = raw_visits.remove(&id).ok_or_else(|| {
            Error::Data(format!("patient '{id}' has no rows in {}", visits_path.display()))
        })?;
        let st = statics.remove(&id).ok_or_else(|| {
            Error::Data(format!("patient '{id}' has no row in {}", static_path.display()))
        })?;
        rows.sort_by_key(|(idx, _)| *idx);
        let mut last = vec![None; c];
        let mut data = Vec::with_capacity(rows.len() * c);
        for (_, row) in rows.iter() {
            for (j, v) in row.iter().enumerate() {
                if v.is_some() {
                    last[j] = *v;
                }
                data.push(last[j].unwrap_or(0.0));
            }
        }
        let t = rows.len();
        patients.push(VisitMatrix {
            label: labels[&id],
            patient_id: id,
            visits: Tensor::matrix(t, c, data)?,
            statics: st,
        });
    }
    let classes = patients.iter().map(|p| p.label).max().unwrap_or(0).max(1) + 1;
    Ok(Cohort {
        patients,
        dynamic_names,
        static_names,
        classes,
        t_max: None,
    })
}

fn write_rows(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    writer.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        writer.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Writes `visits.csv`, `static.csv`, and `labels.csv` into `dir`.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut header = vec!["patient_id".to_string(), "visit_index".to_string()];
    header.extend(cohort.dynamic_names.iter().cloned());
    let mut rows = Vec::new();
    for p in &cohort.patients {
        for r in 0..p.visit_count() {
            let mut row = vec![p.patient_id.clone(), r.to_string()];
            row.extend(p.visits.row(r).iter().map(|v| v.to_string()));
            rows.push(row);
        }
    }
    write_rows(&dir.join("visits.csv"), header, rows)?;

    let mut header = vec!["patient_id".to_string()];
    header.extend(cohort.static_names.iter().cloned());
    let rows = cohort
        .patients
        .iter()
        .map(|p| {
            std::iter::once(p.patient_id.clone())
                .chain(p.statics.iter().map(|v| v.to_string()))
                .collect()
        })
        .collect();
    write_rows(&dir.join("static.csv"), header, rows)?;

    let rows = cohort
        .patients
        .iter()
        .map(|p| vec![p.patient_id.clone(), p.label.to_string()])
        .collect();
    write_rows(
        &dir.join("labels.csv"),
        vec!["patient_id".into(), "label".into()],
        rows,
    )
}

/// Keeps the most recent `t_max` visits, or repeats the final visit until
/// there are `t_max`.
pub fn pad_truncate_patient(p: &VisitMatrix, t_max: usize) -> Result<VisitMatrix> {
    let (t, c) = (p.visit_count(), p.feature_count());
    if t == 0 {
        return Err(Error::Data(format!("patient '{}' has no visits", p.patient_id)));
    }
    let rows: Vec<usize> = if t >= t_max {
        (t - t_max..t).collect()
    } else {
        (0..t).chain(std::iter::repeat_n(t - 1, t_max - t)).collect()
    };
    let data = rows.iter().flat_map(|&r| p.visits.row(r).to_vec()).collect();
    Ok(VisitMatrix {
        visits: Tensor::matrix(t_max, c, data)?,
        ..p.clone()
    })
}

pub fn pad_truncate(cohort: &Cohort, t_max: usize) -> Result<Cohort> {
    if t_max == 0 {
        return Err(Error::Config("padding length must be at least 1".into()));
    }
    if cohort.is_empty() {
        return Err(Error::Data("cannot pad an empty cohort".into()));
    }
    let patients = cohort
        .patients
        .iter()
        .map(|p| pad_truncate_patient(p, t_max))
        .collect::<Result<_>>()?;
    Ok(Cohort {
        patients,
        t_max: Some(t_max),
        ..cohort.clone()
    })
}

/// Per-feature z-score statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub dynamic_mean: Vec<f64>,
    pub dynamic_std: Vec<f64>,
    pub static_mean: Vec<f64>,
    pub static_std: Vec<f64>,
}

/// Standard deviations at or below this are treated as zero variance.
const MIN_STD: f64 = 1e-12;

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl NormStats {
    /// Statistics over the patients selected by `train` only.
    pub fn fit(cohort: &Cohort, train: &[usize]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("normalization needs at least one training patient".into()));
        }
        let c = cohort.dynamic_names.len();
        let s = cohort.static_names.len();
        let chosen: Vec<&VisitMatrix> = train.iter().map(|&i| &cohort.patients[i]).collect();
        let (dynamic_mean, dynamic_std) = (0..c)
            .map(|j| mean_std(chosen.iter().flat_map(move |p| (0..p.visit_count()).map(move |r| p.visits.at(r, j)))))
            .unzip();
        let (static_mean, static_std) = (0..s)
            .map(|j| mean_std(chosen.iter().map(move |p| p.statics[j])))
            .unzip();
        Ok(Self {
            dynamic_mean,
            dynamic_std,
            static_mean,
            static_std,
        })
    }

    pub fn apply(&self, p: &VisitMatrix) -> Result<VisitMatrix> {
        let c = p.feature_count();
        if c != self.dynamic_mean.len() || p.statics.len() != self.static_mean.len() {
            return Err(Error::ShapeMismatch {
                op: "normalize",
                lhs: vec![self.dynamic_mean.len(), self.static_mean.len()],
                rhs: vec![c, p.statics.len()],
            });
        }
        let z = |v: f64, mean: f64, std: f64| if std <= MIN_STD { 0.0 } else { (v - mean) / std };
        let data = p
            .visits
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| z(*v, self.dynamic_mean[i % c], self.dynamic_std[i % c]))
            .collect();
        let statics = p
            .statics
            .iter()
            .enumerate()
            .map(|(j, v)| z(*v, self.static_mean[j], self.static_std[j]))
            .collect();
        Ok(VisitMatrix {
            visits: Tensor::new(p.visits.shape().to_vec(), data)?,
            statics,
            ..p.clone()
        })
    }
}

pub fn normalize(cohort: &Cohort, stats: &NormStats) -> Result<Cohort> {
    let patients = cohort
        .patients
        .iter()
        .map(|p| stats.apply(p))
        .collect::<Result<_>>()?;
    Ok(Cohort {
        patients,
        ..cohort.clone()
    })
}

/// Generative parameters for one class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassProfile {
    /// Trend increment per visit.
    pub slope: f64,
    /// Baseline magnitude of the visit-to-visit alternation.
    pub amplitude: f64,
    /// Sign of the coupling between trend direction and alternation growth
    /// (`+1`, `-1`, or `0` for none).
    pub correlation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub patients: usize,
    pub classes: Vec<ClassProfile>,
    pub dynamic_features: usize,
    /// Extra dynamic features of pure unit-variance white noise.
    pub noise_features: usize,
    pub static_features: usize,
    /// Shift of the static Bernoulli rate across classes (0 = no signal).
    pub static_signal: f64,
    pub mean_visits: usize,
    pub visit_jitter: usize,
    pub noise: f64,
    /// Alternation growth per visit for a unit correlation.
    pub coupling: f64,
    /// Draw each series' trend direction at random, so that direction alone
    /// carries no class information.
    pub random_direction: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            patients: 200,
            classes: vec![
                ClassProfile {
                    slope: 0.5,
                    amplitude: 0.5,
                    correlation: 1.0,
                },
                ClassProfile {
                    slope: -0.5,
                    amplitude: 1.0,
                    correlation: -1.0,
                },
                ClassProfile {
                    slope: 0.0,
                    amplitude: 1.5,
                    correlation: 0.0,
                },
            ],
            dynamic_features: 5,
            noise_features: 0,
            static_features: 2,
            static_signal: 0.2,
            mean_visits: 10,
            visit_jitter: 3,
            noise: 0.3,
            coupling: 0.2,
            random_direction: false,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Two classes that differ only in the sign of the trend/alternation
    /// coupling; trend direction is random per series.
    pub fn correlation_only() -> Self {
        Self {
            classes: vec![
                ClassProfile {
                    slope: 0.5,
                    amplitude: 0.0,
                    correlation: 1.0,
                },
                ClassProfile {
                    slope: 0.5,
                    amplitude: 0.0,
                    correlation: -1.0,
                },
            ],
            static_signal: 0.0,
            coupling: 0.3,
            random_direction: true,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "correlation" => Some(Self::correlation_only()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patients == 0 {
            return Err(Error::Config("synthetic cohort needs at least one patient".into()));
        }
        if self.classes.len() < 2 {
            return Err(Error::Config("synthetic cohort needs at least two classes".into()));
        }
        if self.dynamic_features + self.noise_features == 0 {
            return Err(Error::Config("synthetic cohort needs a dynamic feature".into()));
        }
        for (i, a) in self.classes.iter().enumerate() {
            for (j, b) in self.classes.iter().enumerate().skip(i + 1) {
                if a == b {
                    return Err(Error::Config(format!(
                        "classes {i} and {j} have identical generative parameters"
                    )));
                }
            }
        }
        if self.noise.is_nan() || self.noise < 0.0 {
            return Err(Error::Config("noise scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generates a cohort whose classes differ in trend slope, alternation
/// amplitude, and trend/alternation coupling.
///
/// Each series is `base + dir·slope·τ + a(τ)·(-1)^τ + noise`, where
/// `a(τ) = amplitude + coupling·correlation·dir·(τ - centre)`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.classes.len();
    let c = spec.dynamic_features + spec.noise_features;
    let mut patients = Vec::with_capacity(spec.patients);
    for i in 0..spec.patients {
        let label = i % k;
        let profile = spec.classes[label];
        let jitter = spec.visit_jitter as i64;
        let t = (spec.mean_visits as i64 + rng.random_range(-jitter..=jitter)).max(3) as usize;
        let centre = (t as f64 - 1.0) / 2.0;
        let mut data = vec![0.0; t * c];
        for j in 0..c {
            if j >= spec.dynamic_features {
                for r in 0..t {
                    data[r * c + j] = rng.sample::<f64, _>(StandardNormal);
                }
                continue;
            }
            let dir = if spec.random_direction && rng.random_bool(0.5) { -1.0 } else { 1.0 };
            let base: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
            for r in 0..t {
                let tau = r as f64;
                let amp = profile.amplitude + spec.coupling * profile.correlation * dir * (tau - centre);
                let alt = if r % 2 == 0 { 1.0 } else { -1.0 };
                let eps: f64 = rng.sample(StandardNormal);
                data[r * c + j] = base + dir * profile.slope * tau + amp * alt + spec.noise * eps;
            }
        }
        let rate = if k > 1 {
            0.5 + spec.static_signal * (label as f64 / (k - 1) as f64 - 0.5)
        } else {
            0.5
        };
        let statics = (0..spec.static_features)
            .map(|_| if rng.random_bool(rate.clamp(0.0, 1.0)) { 1.0 } else { 0.0 })
            .collect();
        patients.push(VisitMatrix {
            patient_id: format!("p{i:05}"),
            visits: Tensor::matrix(t, c, data)?,
            statics,
            label,
        });
    }
    let dynamic_names = (0..c)
        .map(|j| {
            if j < spec.dynamic_features {
                format!("dyn_{j}")
            } else {
                format!("noise_{}", j - spec.dynamic_features)
            }
        })
        .collect();
    Ok(Cohort {
        patients,
        dynamic_names,
        static_names: (0..spec.static_features).map(|j| format!("st_{j}")).collect(),
        classes: k,
        t_max: None,
    })
}

/// Patient ids grouped by label, for reporting.
pub fn ids_by_label(cohort: &Cohort) -> BTreeMap<usize, Vec<String>> {
    let mut out: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for p in &cohort.patients {
        out.entry(p.label).or_default().push(p.patient_id.clone());
    }
    out
}

/// Checks that folds partition `0..n` exactly.
pub fn is_partition(folds: &[Vec<usize>], n: usize) -> bool {
    let mut seen = HashSet::new();
    folds.iter().flatten().all(|i| *i < n && seen.insert(*i)) && seen.len() == n
}
