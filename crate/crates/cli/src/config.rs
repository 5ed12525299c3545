//! Run configuration: defaults, then `key = value` config file, then flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use tvnet::data::{load_cohort, synth_generate, Cohort, SynthSpec, DEFAULT_T_MAX};
use tvnet::men::{DEFAULT_DILATIONS, DEFAULT_KERNEL_WIDTH};
use tvnet::model::AblationConfig;
use tvnet::train::{ExperimentConfig, TrainConfig};
use tvnet::{Error, Result};

/// Flags shared by every subcommand. Any flag may also be given in the config
/// file under the same name without the leading dashes.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// `key = value` file; flags override its entries.
    #[arg(long, value_name = "PATH")]
    pub config_file: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub visits: Option<PathBuf>,
    #[arg(long = "static", value_name = "PATH")]
    pub statics: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    /// Synthetic cohort preset instead of CSV files: default | correlation.
    #[arg(long, value_name = "NAME")]
    pub synth: Option<String>,
    /// Patient count for the synthetic cohort.
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Symlet order K (2..=20).
    #[arg(long, value_name = "K")]
    pub symlet: Option<usize>,
    #[arg(long, value_name = "L")]
    pub kernel_width: Option<usize>,
    /// Dilation rates for the three branches, e.g. `0,1,3`.
    #[arg(long, value_name = "A,B,C")]
    pub dilations: Option<String>,
    #[arg(long)]
    pub tmax: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Ablation preset A1..A7.
    #[arg(long, value_name = "A1..A7")]
    pub config: Option<String>,
    #[arg(long)]
    pub parallel_folds: bool,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Dynamic feature name.
    #[arg(long)]
    pub feature: Option<String>,
}

const KEYS: [&str; 19] = [
    "visits",
    "static",
    "labels",
    "synth",
    "patients",
    "out",
    "seed",
    "symlet",
    "kernel-width",
    "dilations",
    "tmax",
    "lr",
    "batch",
    "epochs",
    "folds",
    "config",
    "parallel-folds",
    "checkpoint",
    "feature",
];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Files {
        visits: PathBuf,
        statics: PathBuf,
        labels: PathBuf,
    },
    Synth {
        preset: String,
        patients: Option<usize>,
    },
}

/// Effective configuration after merging.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<DataSource>,
    pub out: PathBuf,
    pub seed: u64,
    pub symlet: usize,
    pub kernel_width: usize,
    pub dilations: [usize; 3],
    pub t_max: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub folds: usize,
    pub ablation: AblationConfig,
    pub parallel_folds: bool,
    pub checkpoint: Option<PathBuf>,
    pub feature: Option<String>,
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}: line {}: expected key = value", path.display(), n + 1))
        })?;
        let key = key.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "{}: line {}: unknown key '{key}'",
                path.display(),
                n + 1
            )));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn flag_entries(args: &RunArgs) -> Vec<(&'static str, Option<String>)> {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    vec![
        ("visits", path(&args.visits)),
        ("static", path(&args.statics)),
        ("labels", path(&args.labels)),
        ("synth", args.synth.clone()),
        ("patients", args.patients.map(|v| v.to_string())),
        ("out", path(&args.out)),
        ("seed", args.seed.map(|v| v.to_string())),
        ("symlet", args.symlet.map(|v| v.to_string())),
        ("kernel-width", args.kernel_width.map(|v| v.to_string())),
        ("dilations", args.dilations.clone()),
        ("tmax", args.tmax.map(|v| v.to_string())),
        ("lr", args.lr.map(|v| v.to_string())),
        ("batch", args.batch.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("folds", args.folds.map(|v| v.to_string())),
        ("config", args.config.clone()),
        ("parallel-folds", args.parallel_folds.then(|| "true".to_string())),
        ("checkpoint", path(&args.checkpoint)),
        ("feature", args.feature.clone()),
    ]
}

fn parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'"))),
    }
}

fn parse_dilations(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Error::Config(format!("dilations: expected three comma-separated integers, got '{s}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0; 3];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|_| bad())?;
    }
    Ok(out)
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let mut map = match &args.config_file {
            Some(path) => parse_config_file(path)?,
            None => BTreeMap::new(),
        };
        for (key, value) in flag_entries(args) {
            if let Some(v) = value {
                map.insert(key.to_string(), v);
            }
        }
        Self::from_map(&map)
    }

    fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let files: Vec<Option<&String>> = ["visits", "static", "labels"].iter().map(|k| map.get(*k)).collect();
        let data = match (files.as_slice(), map.get("synth")) {
            ([None, None, None], None) => None,
            ([None, None, None], Some(preset)) => Some(DataSource::Synth {
                preset: preset.clone(),
                patients: map.get("patients").map(|_| parse(map, "patients", 0)).transpose()?,
            }),
            ([Some(v), Some(s), Some(l)], None) => Some(DataSource::Files {
                visits: PathBuf::from(v),
                statics: PathBuf::from(s),
                labels: PathBuf::from(l),
            }),
            (_, Some(_)) => {
                return Err(Error::Config("give either --synth or the three data files, not both".into()))
            }
            _ => return Err(Error::Config("--visits, --static, and --labels must be given together".into())),
        };
        let ablation = AblationConfig::preset(map.get("config").map_or("A7", String::as_str))?;
        let config = Self {
            data,
            out: PathBuf::from(map.get("out").map_or("tvnet-out", String::as_str)),
            seed: parse(map, "seed", 0)?,
            symlet: parse(map, "symlet", 6)?,
            kernel_width: parse(map, "kernel-width", DEFAULT_KERNEL_WIDTH)?,
            dilations: map.get("dilations").map_or(Ok(DEFAULT_DILATIONS), |s| parse_dilations(s))?,
            t_max: parse(map, "tmax", DEFAULT_T_MAX)?,
            lr: parse(map, "lr", 1e-4)?,
            batch: parse(map, "batch", 64)?,
            epochs: parse(map, "epochs", 50)?,
            folds: parse(map, "folds", 10)?,
            ablation,
            parallel_folds: parse(map, "parallel-folds", false)?,
            checkpoint: map.get("checkpoint").map(PathBuf::from),
            feature: map.get("feature").cloned(),
        };
        if !(config.lr.is_finite() && config.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", config.lr)));
        }
        if config.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        Ok(config)
    }

    /// The configuration as a config file; reading it back reproduces `self`.
    pub fn manifest(&self, command: &str) -> String {
        let mut out = format!("# tvnet {command}\n");
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match &self.data {
            Some(DataSource::Files { visits, statics, labels }) => {
                line("visits", visits.display().to_string());
                line("static", statics.display().to_string());
                line("labels", labels.display().to_string());
            }
            Some(DataSource::Synth { preset, patients }) => {
                line("synth", preset.clone());
                if let Some(n) = patients {
                    line("patients", n.to_string());
                }
            }
            None => {}
        }
        line("out", self.out.display().to_string());
        line("seed", self.seed.to_string());
        line("symlet", self.symlet.to_string());
        line("kernel-width", self.kernel_width.to_string());
        let [a, b, c] = self.dilations;
        line("dilations", format!("{a},{b},{c}"));
        line("tmax", self.t_max.to_string());
        line("lr", self.lr.to_string());
        line("batch", self.batch.to_string());
        line("epochs", self.epochs.to_string());
        line("folds", self.folds.to_string());
        line("config", self.ablation.name().unwrap_or("custom").to_string());
        line("parallel-folds", self.parallel_folds.to_string());
        if let Some(p) = &self.checkpoint {
            line("checkpoint", p.display().to_string());
        }
        if let Some(f) = &self.feature {
            line("feature", f.clone());
        }
        out
    }

    pub fn synth_spec(&self) -> Result<SynthSpec> {
        match &self.data {
            Some(DataSource::Synth { preset, patients }) => {
                let mut spec = SynthSpec::preset(preset).ok_or_else(|| {
                    Error::Config(format!("unknown synthetic preset '{preset}'; expected default or correlation"))
                })?;
                spec.seed = self.seed;
                if let Some(n) = patients {
                    spec.patients = *n;
                }
                Ok(spec)
            }
            _ => Err(Error::Config("this command needs --synth".into())),
        }
    }

    pub fn load_data(&self) -> Result<Cohort> {
        match &self.data {
            Some(DataSource::Files { visits, statics, labels }) => load_cohort(visits, statics, labels),
            Some(DataSource::Synth { .. }) => synth_generate(&self.synth_spec()?),
            None => Err(Error::Config(
                "no data: give --visits, --static, and --labels, or --synth".into(),
            )),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            t_max: self.t_max,
            order: self.symlet,
            kernel_width: self.kernel_width,
            dilations: self.dilations,
            ablation: self.ablation,
            train: TrainConfig {
                lr: self.lr,
                batch_size: self.batch,
                epochs: self.epochs,
                seed: self.seed,
            },
            folds: self.folds,
            parallel: self.parallel_folds,
        }
    }

    pub fn feature(&self) -> Result<&str> {
        self.feature
            .as_deref()
            .ok_or_else(|| Error::Config("this command needs --feature".into()))
    }

    pub fn checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("this command needs --checkpoint".into()))
    }
}
