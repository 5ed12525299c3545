//! Acceptance suite: one PASS/FAIL line per criterion. Run with
//! `cargo test -p tvnet-cli --test acceptance -- --nocapture` or plainly as
//! part of `cargo test`; the process exits non-zero if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvnet::autodiff::{finite_diff_check, Tensor};
use tvnet::data::{pad_truncate, synth_generate, SynthSpec};
use tvnet::fodam::fodam_forward;
use tvnet::men::{dilated_conv_branch, MenBranchParams};
use tvnet::metrics::{auprc_binary, auroc_binary};
use tvnet::model::{loss_and_gradient, AblationConfig, ModelConfig, ModelParams, PreparedPatient};
use tvnet::train::{kfold_indices, run_fold, ExperimentConfig, TrainConfig};
use tvnet::wavelet::{dwt_single_level, ftm_decompose, idwt_single_level, symlet_filters, MAX_ORDER, MIN_ORDER};

type Outcome = Result<String, String>;

/// Name, check, and runtime budget in seconds.
type Criterion = (&'static str, fn() -> Outcome, u64);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn filter_bank() -> Outcome {
    let mut worst = [0.0f64; 3];
    for k in MIN_ORDER..=MAX_ORDER {
        let f = symlet_filters(k).map_err(|e| e.to_string())?;
        let (h, g) = (f.lowpass(), f.highpass());
        let taps = h.len();
        let sum: f64 = h.iter().sum();
        let energy: f64 = h.iter().map(|v| v * v).sum();
        worst[0] = worst[0].max((sum - 2f64.sqrt()).abs());
        worst[1] = worst[1].max((energy - 1.0).abs());
        for n in 0..taps {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            if g[n] != sign * h[taps - 1 - n] {
                return Err(format!("sym{k}: mirror relation broken at tap {n}"));
            }
        }
        for p in 0..k {
            let moment: f64 = g.iter().enumerate().map(|(n, v)| (n as f64).powi(p as i32) * v).sum();
            let ratio = moment.abs() / (1e-7 * (2.0 * k as f64).powi(p as i32));
            worst[2] = worst[2].max(ratio);
        }
    }
    check(
        worst[0] <= 1e-12 && worst[1] <= 1e-12 && worst[2] <= 1.0,
        format!(
            "max |Σh-√2| {:.1e}, max |Σh²-1| {:.1e}, worst moment / bound {:.2e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn reconstruction() -> Outcome {
    let mut worst = 0.0f64;
    for k in MIN_ORDER..=MAX_ORDER {
        let f = symlet_filters(k).map_err(|e| e.to_string())?;
        for t in [1, 5, 10, 50] {
            for seed in 0..5 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + t as u64);
                let x: Vec<f64> = (0..t).map(|_| rng.random_range(-10.0..10.0)).collect();
                let pair = dwt_single_level(&x, &f).map_err(|e| e.to_string())?;
                let y = idwt_single_level(&pair, &f, t).map_err(|e| e.to_string())?;
                for (a, b) in x.iter().zip(&y) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    check(worst <= 1e-10, format!("max ‖x - idwt(dwt(x))‖∞ {worst:.1e} over 380 cases"))
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let width = rng.random_range(1..=3);
        let dilation = [0, 1, 3][rng.random_range(0..3)];
        let m = rng.random_range(dilation * (width - 1) + 1..=40);
        let x: Vec<f64> = (0..2 * m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f64> = (0..4 * width).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..2).map(|_| rng.random_range(-0.5..0.5)).collect();
        let params = MenBranchParams {
            kernels: Tensor::new(vec![2, 2, width], g.clone()).unwrap(),
            biases: Tensor::vector(b.clone()),
            dilation,
        };
        let out = dilated_conv_branch(&Tensor::matrix(2, m, x.clone()).unwrap(), &params)
            .map_err(|e| e.to_string())?;
        let q = m - dilation * (width - 1);
        if out.shape() != [2, q] {
            return Err(format!("output shape {:?}, expected [2, {q}]", out.shape()));
        }
        for p in 0..2 {
            for j in 0..q {
                let mut acc = b[p];
                for k in 0..2 {
                    for l in 0..width {
                        acc += g[p * 2 * width + k * width + l] * x[k * m + j + dilation * l];
                    }
                }
                worst = worst.max((acc.tanh() - out.at(p, j)).abs());
            }
        }
    }
    check(worst <= 1e-12, format!("max deviation from brute force {worst:.1e} on 50 instances"))
}

fn pair_auroc(s: &[f64], y: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn threshold_auprc(s: &[f64], y: &[bool]) -> f64 {
    let mut thresholds = s.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let pos = y.iter().filter(|v| **v).count() as f64;
    let (mut prev, mut area) = (0.0, 0.0);
    for t in thresholds {
        let (mut tp, mut sel) = (0.0, 0.0);
        for i in 0..s.len() {
            if s[i] >= t {
                sel += 1.0;
                if y[i] {
                    tp += 1.0;
                }
            }
        }
        area += (tp / pos - prev) * tp / sel;
        prev = tp / pos;
    }
    area
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=12);
        let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        // one positive and one negative at random distinct positions
        let i = rng.random_range(0..n);
        y[i] = true;
        y[(i + rng.random_range(1..n)) % n] = false;
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..7) as f64 / 6.0).collect();
        let a = auroc_binary(&s, &y).map_err(|e| e.to_string())?;
        let p = auprc_binary(&s, &y).map_err(|e| e.to_string())?;
        worst = worst.max((a - pair_auroc(&s, &y)).abs()).max((p - threshold_auprc(&s, &y)).abs());
    }
    let example = auroc_binary(&[0.9, 0.8, 0.4, 0.3], &[true, false, true, false]).map_err(|e| e.to_string())?;
    check(
        worst <= 1e-12 && example == 0.75,
        format!("max deviation {worst:.1e} on 200 instances; worked example AUROC {example}"),
    )
}

fn gradient_error(ablation: AblationConfig, seed: u64) -> Result<f64, String> {
    let cfg = ModelConfig {
        ablation,
        order: 3,
        ..ModelConfig::new(8, 3, 2, 3)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(&cfg, &mut rng).map_err(|e| e.to_string())?;
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            if *v == 0.0 {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    let filters = symlet_filters(cfg.order).map_err(|e| e.to_string())?;
    let batch: Vec<PreparedPatient> = (0..4)
        .map(|i| {
            let data = (0..cfg.t_max * cfg.dynamic).map(|_| rng.random_range(-1.5..1.5)).collect();
            let visits = Tensor::matrix(cfg.t_max, cfg.dynamic, data).unwrap();
            PreparedPatient {
                pairs: ftm_decompose(&visits, &filters).unwrap(),
                statics: (0..cfg.statics).map(|_| rng.random_range(-1.0..1.0)).collect(),
                label: i % cfg.classes,
            }
        })
        .collect();
    let refs: Vec<&PreparedPatient> = batch.iter().collect();
    let report = finite_diff_check(
        &mut params,
        |p: &ModelParams| {
            let (loss, grads) = loss_and_gradient(p, &refs)?;
            Ok((loss, grads.into_iter().flat_map(Tensor::into_data).collect()))
        },
        100,
        1e-5,
        seed,
    )
    .map_err(|e| e.to_string())?;
    Ok(report.max_rel_error)
}

fn gradients() -> Outcome {
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for (name, ablation) in AblationConfig::PRESETS {
        let err = gradient_error(ablation, 11)?;
        worst = worst.max(err);
        parts.push(format!("{name} {err:.1e}"));
    }
    check(worst <= 1e-4, format!("max relative error: {}", parts.join(", ")))
}

fn fodam_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut sum_err, mut shift_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(2..=30);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let out = fodam_forward(&r).map_err(|e| e.to_string())?;
        sum_err = sum_err.max((out.alpha.iter().sum::<f64>() - 1.0).abs());
        if out.alpha.iter().any(|a| *a < 0.0) {
            return Err("negative attention weight".into());
        }
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        if fodam_forward(&neg).map_err(|e| e.to_string())?.alpha != out.alpha {
            return Err("attention changed under negation".into());
        }
        let c = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = r.iter().map(|v| v + c).collect();
        let moved = fodam_forward(&shifted).map_err(|e| e.to_string())?;
        let tol = 1e-9 * (1.0 + f64::abs(c));
        for (a, b) in out.h_var.iter().zip(&moved.h_var).chain(out.alpha.iter().zip(&moved.alpha)) {
            shift_err = shift_err.max((a - b).abs() / tol);
        }
    }
    check(
        sum_err <= 1e-12 && shift_err <= 1.0,
        format!("max |Σα-1| {sum_err:.1e}; α ≥ 0 and negation-exact; worst shift deviation / tolerance {shift_err:.2e}"),
    )
}

/// Trains on four fifths of the cohort and reports macro AUROC/AUPRC on the
/// remaining fifth.
fn held_out(spec: &SynthSpec, ablation: AblationConfig, lr: f64, seed: u64) -> Result<(f64, f64), String> {
    let cohort = synth_generate(spec).map_err(|e| e.to_string())?;
    let exp = ExperimentConfig {
        t_max: 10,
        order: 6,
        ablation,
        train: TrainConfig {
            lr,
            batch_size: 64,
            epochs: 50,
            seed,
        },
        folds: 5,
        ..ExperimentConfig::default()
    };
    let padded = pad_truncate(&cohort, exp.t_max).map_err(|e| e.to_string())?;
    let test = kfold_indices(padded.len(), exp.folds, seed).map_err(|e| e.to_string())?.swap_remove(0);
    let train: Vec<usize> = (0..padded.len()).filter(|i| test.binary_search(i).is_err()).collect();
    let report = run_fold(&padded, &train, &test, &exp, 0).map_err(|e| e.to_string())?;
    Ok((report.auroc.value, report.auprc.value))
}

fn learning() -> Outcome {
    let (mut auroc, mut auprc) = (0.0, 0.0);
    for seed in 0..3 {
        let spec = SynthSpec {
            patients: 1000,
            seed,
            ..SynthSpec::default()
        };
        let (a, p) = held_out(&spec, AblationConfig::FULL, 1e-4, seed)?;
        auroc += a / 3.0;
        auprc += p / 3.0;
    }
    check(
        auroc >= 0.95 && auprc >= 0.90,
        format!("A7 held-out macro AUROC {auroc:.4}, AUPRC {auprc:.4} (mean of 3 seeds)"),
    )
}

fn ablation_ordering() -> Outcome {
    let mut means = Vec::new();
    for name in ["A6", "A1", "A2"] {
        let ablation = AblationConfig::preset(name).unwrap();
        let mut total = 0.0;
        for seed in 0..5 {
            let spec = SynthSpec {
                patients: 1000,
                seed,
                ..SynthSpec::correlation_only()
            };
            total += held_out(&spec, ablation, 3e-3, seed)?.0 / 5.0;
        }
        means.push(total);
    }
    let (a6, a1, a2) = (means[0], means[1], means[2]);
    check(
        a6 >= 0.85 && a1 <= 0.65 && a2 <= 0.65 && a6 - a1.max(a2) >= 0.15,
        format!("macro AUROC A6 {a6:.4}, A1 {a1:.4}, A2 {a2:.4} (mean of 5 seeds)"),
    )
}

fn tvnet(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tvnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("tvnet {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for out in ["a", "b"] {
        tvnet(&["train", "--synth", "default", "--seed", "7", "--out", out], dir.path())?;
    }
    let mut files = vec!["metrics.csv".to_string()];
    let mut fold = 0;
    while dir.path().join(format!("a/fold_{fold}.ckpt")).exists() {
        files.push(format!("fold_{fold}.ckpt"));
        fold += 1;
    }
    for f in &files {
        let a = std::fs::read(dir.path().join("a").join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("b").join(f)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{f} differs between runs"));
        }
    }
    check(fold > 0, format!("metrics.csv and {fold} checkpoints byte-identical"))
}

fn mean_row(path: &Path) -> Result<(f64, f64), String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let line = text
        .lines()
        .find(|l| l.starts_with("mean,macro,"))
        .ok_or_else(|| format!("{} has no mean row", path.display()))?;
    let cells: Vec<f64> = line.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    Ok((cells[0], cells[1]))
}

fn sweep() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let common = ["--synth", "default", "--patients", "60", "--folds", "3", "--epochs", "3", "--seed", "5"];
    let mut args = vec!["sweep-symlets", "--out", "sweep"];
    args.extend(common);
    tvnet(&args, dir.path())?;
    let table = std::fs::read_to_string(dir.path().join("sweep/sweep.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<String>> = table.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    if rows.len() != 19 {
        return Err(format!("sweep.csv has {} rows", rows.len()));
    }
    let mut worst = 0.0f64;
    for (row, k) in rows.iter().zip(MIN_ORDER..=MAX_ORDER) {
        if row[0] != k.to_string() {
            return Err(format!("row for K={k} labelled {}", row[0]));
        }
        let out = format!("k{k}");
        let ks = k.to_string();
        let mut args = vec!["train", "--symlet", &ks, "--out", &out];
        args.extend(common);
        tvnet(&args, dir.path())?;
        let (a, p) = mean_row(&dir.path().join(&out).join("metrics.csv"))?;
        let swept: (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        worst = worst.max((a - swept.0).abs()).max((p - swept.1).abs());
    }
    check(worst <= 1e-12, format!("19 rows; max deviation from standalone train {worst:.1e}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("filter bank invariants", filter_bank, 1),
        ("perfect reconstruction", reconstruction, 5),
        ("convolution oracle", conv_oracle, 1),
        ("metric oracles", metric_oracles, 2),
        ("gradient check", gradients, 30),
        ("attention invariants", fodam_invariants, 1),
        ("learning check", learning, 300),
        ("ablation ordering", ablation_ordering, 600),
        ("determinism", determinism, 300),
        ("symlet sweep plumbing", sweep, 1800),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let (ok, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name}: {detail} [{:.2}s, budget {budget}s]",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
