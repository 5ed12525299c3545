use std::fmt::Write as _;
use std::path::Path;

use tvnet::checkpoint::Checkpoint;
use tvnet::data::{pad_truncate, write_cohort, Cohort};
use tvnet::fodam::fodam_forward;
use tvnet::metrics::{macro_ovr, trend_variation_report, MacroReport, Metric, ScoredCohort};
use tvnet::train::{cross_validate, score_patients, CvReport};
use tvnet::wavelet::{dwt_single_level, symlet_filters, MAX_ORDER, MIN_ORDER};
use tvnet::{Error, Result};

use crate::config::RunConfig;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Creates the output directory and writes the effective configuration.
pub fn prepare_output(config: &RunConfig, command: &str) -> Result<()> {
    std::fs::create_dir_all(&config.out).map_err(io_err(&config.out))?;
    let path = config.out.join("manifest.txt");
    std::fs::write(&path, config.manifest(command)).map_err(io_err(&path))
}

fn metric_rows(label: &str, auroc: &MacroReport, auprc: &MacroReport) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = auroc
        .per_class
        .iter()
        .zip(&auprc.per_class)
        .enumerate()
        .map(|(k, (a, p))| vec![label.to_string(), k.to_string(), opt(*a), opt(*p)])
        .collect();
    rows.push(vec![
        label.to_string(),
        "macro".into(),
        auroc.value.to_string(),
        auprc.value.to_string(),
    ]);
    rows
}

fn write_cv_outputs(out: &Path, report: &CvReport) -> Result<()> {
    let mut rows = Vec::new();
    for fold in &report.folds {
        let f = fold.fold;
        fold.checkpoint.save(&out.join(format!("fold_{f}.ckpt")))?;
        write_csv(
            &out.join(format!("fold_{f}_epochs.csv")),
            &["epoch", "mean_loss"],
            fold.epoch_losses
                .iter()
                .enumerate()
                .map(|(e, l)| vec![(e + 1).to_string(), l.to_string()]),
        )?;
        rows.extend(metric_rows(&f.to_string(), &fold.auroc, &fold.auprc));
    }
    rows.push(vec![
        "mean".into(),
        "macro".into(),
        report.mean_auroc.to_string(),
        report.mean_auprc.to_string(),
    ]);
    write_csv(&out.join("metrics.csv"), &["fold", "class", "auroc", "auprc"], rows)
}

pub fn train(config: &RunConfig) -> Result<String> {
    let cohort = config.load_data()?;
    let report = cross_validate(&cohort, &config.experiment())?;
    write_cv_outputs(&config.out, &report)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "config  K   folds  mean_auroc  mean_auprc");
    let _ = writeln!(
        summary,
        "{:<7} {:<3} {:<6} {:<11.4} {:.4}",
        config.ablation.name().unwrap_or("custom"),
        config.symlet,
        report.folds.len(),
        report.mean_auroc,
        report.mean_auprc
    );
    for fold in &report.folds {
        for k in &fold.auroc.skipped {
            let _ = writeln!(summary, "fold {}: class {k} degenerate in test split, skipped", fold.fold);
        }
    }
    let path = config.out.join("summary.txt");
    std::fs::write(&path, &summary).map_err(io_err(&path))?;
    Ok(summary)
}

/// Pads `cohort` to the checkpoint's visit count after checking dimensions.
fn conform(checkpoint: &Checkpoint, cohort: &Cohort) -> Result<Cohort> {
    let cfg = &checkpoint.params.config;
    let max_label = cohort.patients.iter().map(|p| p.label).max().unwrap_or(0);
    if cohort.dynamic_names.len() != cfg.dynamic || cohort.static_names.len() != cfg.statics || max_label >= cfg.classes {
        return Err(Error::Config(format!(
            "checkpoint expects {} dynamic, {} static features and {} classes; data has {} dynamic, {} static and labels up to {}",
            cfg.dynamic,
            cfg.statics,
            cfg.classes,
            cohort.dynamic_names.len(),
            cohort.static_names.len(),
            max_label
        )));
    }
    pad_truncate(cohort, cfg.t_max)
}

pub fn eval(config: &RunConfig) -> Result<String> {
    let checkpoint = Checkpoint::load(config.checkpoint()?)?;
    let cohort = conform(&checkpoint, &config.load_data()?)?;
    let all: Vec<usize> = (0..cohort.len()).collect();
    let scored = score_patients(&checkpoint, &cohort, &all)?;
    write_scores(&config.out.join("scores.csv"), &scored)?;
    let auroc = macro_ovr(&scored, Metric::Auroc)?;
    let auprc = macro_ovr(&scored, Metric::Auprc)?;
    write_csv(
        &config.out.join("metrics.csv"),
        &["fold", "class", "auroc", "auprc"],
        metric_rows("eval", &auroc, &auprc),
    )?;
    Ok(format!("macro AUROC {:.4}  macro AUPRC {:.4}\n", auroc.value, auprc.value))
}

fn write_scores(path: &Path, scored: &ScoredCohort) -> Result<()> {
    let mut header = vec!["patient_id".to_string(), "label".to_string()];
    header.extend((0..scored.classes).map(|k| format!("p{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = scored.ids.iter().zip(&scored.probs).zip(&scored.labels).map(|((id, p), y)| {
        let mut row = vec![id.clone(), y.to_string()];
        row.extend(p.iter().map(|v| v.to_string()));
        row
    });
    write_csv(path, &header, rows)
}

fn feature_index(cohort: &Cohort, name: &str) -> Result<usize> {
    cohort.feature_index(name).ok_or_else(|| {
        Error::Config(format!(
            "unknown feature '{name}'; available: {}",
            cohort.dynamic_names.join(", ")
        ))
    })
}

pub fn decompose(config: &RunConfig) -> Result<String> {
    let filters = symlet_filters(config.symlet)?;
    let cohort = config.load_data()?;
    let j = feature_index(&cohort, config.feature()?)?;
    let mut rows = Vec::new();
    for p in &cohort.patients {
        let tv = dwt_single_level(&p.column(j), &filters)?;
        for (i, (e, r)) in tv.trend.iter().zip(&tv.variation).enumerate() {
            rows.push(vec![p.patient_id.clone(), i.to_string(), e.to_string(), r.to_string()]);
        }
    }
    let path = config.out.join("decompose.csv");
    write_csv(&path, &["patient_id", "index", "trend", "variation"], rows)?;
    Ok(format!("wrote {}\n", path.display()))
}

pub fn inspect_attention(config: &RunConfig) -> Result<String> {
    let checkpoint = Checkpoint::load(config.checkpoint()?)?;
    let cfg = &checkpoint.params.config;
    if !cfg.ablation.use_fodam {
        return Err(Error::Config("FODAM disabled in this checkpoint".into()));
    }
    let cohort = conform(&checkpoint, &config.load_data()?)?;
    let j = feature_index(&cohort, config.feature()?)?;
    let filters = symlet_filters(cfg.order)?;
    let mut rows = Vec::new();
    for raw in &cohort.patients {
        let p = match &checkpoint.norm {
            Some(n) => n.apply(raw)?,
            None => raw.clone(),
        };
        let tv = dwt_single_level(&p.column(j), &filters)?;
        let att = fodam_forward(&tv.variation)?;
        for (i, (d, a)) in att.delta.iter().zip(&att.alpha).enumerate() {
            rows.push(vec![p.patient_id.clone(), i.to_string(), d.to_string(), a.to_string()]);
        }
    }
    let path = config.out.join("attention.csv");
    write_csv(&path, &["patient_id", "position", "delta", "alpha"], rows)?;
    Ok(format!("wrote {}\n", path.display()))
}

pub fn correlate(config: &RunConfig) -> Result<String> {
    let cohort = config.load_data()?;
    let report = trend_variation_report(&cohort, config.symlet)?;
    let rows = report.iter().map(|e| {
        vec![
            e.rank.map_or_else(|| "undefined".to_string(), |r| r.to_string()),
            e.class.to_string(),
            e.feature.clone(),
            opt(e.mean_r),
            e.defined.to_string(),
            e.undefined.to_string(),
            e.top5.to_string(),
        ]
    });
    let path = config.out.join("correlations.csv");
    write_csv(
        &path,
        &["rank", "class", "feature", "mean_r", "defined", "undefined", "top5"],
        rows,
    )?;
    let mut summary = String::from("top correlations:\n");
    for e in report.iter().filter(|e| e.top5) {
        let _ = writeln!(
            summary,
            "  {}. class {} {}: r = {:.4}",
            e.rank.unwrap_or(0),
            e.class,
            e.feature,
            e.mean_r.unwrap_or(f64::NAN)
        );
    }
    Ok(summary)
}

pub fn sweep_symlets(config: &RunConfig) -> Result<String> {
    let cohort = config.load_data()?;
    let mut rows = Vec::new();
    let mut best: Option<(usize, f64, f64)> = None;
    for k in MIN_ORDER..=MAX_ORDER {
        let mut experiment = config.experiment();
        experiment.order = k;
        let report = cross_validate(&cohort, &experiment)?;
        rows.push(vec![
            k.to_string(),
            report.mean_auroc.to_string(),
            report.mean_auprc.to_string(),
        ]);
        if best.is_none_or(|(_, a, p)| (report.mean_auroc, report.mean_auprc) > (a, p)) {
            best = Some((k, report.mean_auroc, report.mean_auprc));
        }
    }
    write_csv(&config.out.join("sweep.csv"), &["symlet", "mean_auroc", "mean_auprc"], rows)?;
    let (k, a, p) = best.expect("sweep covers at least one order");
    let line = format!("best symlet: sym{k} (mean AUROC {a:.4}, mean AUPRC {p:.4})\n");
    let path = config.out.join("sweep_summary.txt");
    std::fs::write(&path, &line).map_err(io_err(&path))?;
    Ok(line)
}

pub fn synth(config: &RunConfig) -> Result<String> {
    let spec = config.synth_spec()?;
    let cohort = tvnet::data::synth_generate(&spec)?;
    write_cohort(&cohort, &config.out)?;
    Ok(format!(
        "wrote {} patients with {} dynamic and {} static features to {}\n",
        cohort.len(),
        cohort.dynamic_names.len(),
        cohort.static_names.len(),
        config.out.display()
    ))
}
