//! Static embedding, dynamic fusion, and the softmax head, plus the full
//! configurable forward pass.

use rand::Rng;

use crate::autodiff::{locate, ParameterSet, Tape, Tensor, Var, PROB_FLOOR};
use crate::data::VisitMatrix;
use crate::error::{Error, Result};
use crate::fodam::{fodam_on_tape, pool_on_tape};
use crate::men::{men_output_len, reshape_2d, MenBranchParams, DEFAULT_DILATIONS, DEFAULT_KERNEL_WIDTH};
use crate::wavelet::{decomposed_len, ftm_decompose, symlet_filters, SymletFilters, TrendVariation};

/// Which representation components feed the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AblationConfig {
    pub use_trend: bool,
    pub use_variation: bool,
    pub use_men2d: bool,
    pub use_fodam: bool,
}

impl AblationConfig {
    pub const FULL: Self = Self {
        use_trend: true,
        use_variation: true,
        use_men2d: true,
        use_fodam: true,
    };

    pub const PRESETS: [(&'static str, Self); 7] = [
        ("A1", Self::flags(true, false, false, false)),
        ("A2", Self::flags(false, true, false, false)),
        ("A3", Self::flags(false, true, false, true)),
        ("A4", Self::flags(true, true, false, false)),
        ("A5", Self::flags(true, true, false, true)),
        ("A6", Self::flags(true, true, true, false)),
        ("A7", Self::flags(true, true, true, true)),
    ];

    const fn flags(use_trend: bool, use_variation: bool, use_men2d: bool, use_fodam: bool) -> Self {
        Self {
            use_trend,
            use_variation,
            use_men2d,
            use_fodam,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, c)| *c)
            .ok_or_else(|| Error::Config(format!("unknown ablation config '{name}'; expected A1..A7")))
    }

    /// Preset name, if these flags match one.
    pub fn name(&self) -> Option<&'static str> {
        Self::PRESETS.iter().find(|(_, c)| c == self).map(|(n, _)| *n)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_trend && !self.use_variation {
            return Err(Error::Config("ablation must use trend, variation, or both".into()));
        }
        if self.use_men2d && !(self.use_trend && self.use_variation) {
            return Err(Error::Config("2D MEN needs both trend and variation".into()));
        }
        if self.use_fodam && !self.use_variation {
            return Err(Error::Config("FODAM needs the variation component".into()));
        }
        Ok(())
    }

    /// Rows fed to fusion per feature.
    pub fn fusion_rows(&self) -> usize {
        if self.use_trend && self.use_variation {
            2
        } else {
            1
        }
    }
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::FULL
    }
}

/// Dimensions and hyperparameters that fix every parameter shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Visits per patient after padding.
    pub t_max: usize,
    /// Dynamic features.
    pub dynamic: usize,
    /// Static features.
    pub statics: usize,
    pub classes: usize,
    /// Symlet order.
    pub order: usize,
    pub kernel_width: usize,
    pub dilations: [usize; 3],
    pub ablation: AblationConfig,
}

impl ModelConfig {
    pub fn new(t_max: usize, dynamic: usize, statics: usize, classes: usize) -> Self {
        Self {
            t_max,
            dynamic,
            statics,
            classes,
            order: 6,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            dilations: DEFAULT_DILATIONS,
            ablation: AblationConfig::FULL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ablation.validate()?;
        symlet_filters(self.order)?;
        if self.t_max == 0 || self.dynamic == 0 {
            return Err(Error::Config(format!(
                "model needs at least one visit and one dynamic feature (t={}, c={})",
                self.t_max, self.dynamic
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.kernel_width == 0 {
            return Err(Error::Config("kernel width must be at least 1".into()));
        }
        if self.ablation.use_men2d && men_output_len(self.series_len(), self.dilations, self.kernel_width).is_none() {
            return Err(Error::Config(format!(
                "decomposed length {} is too short for kernel width {} with dilations {:?}",
                self.series_len(),
                self.kernel_width,
                self.dilations
            )));
        }
        Ok(())
    }

    /// Length `m` of each trend/variation series.
    pub fn series_len(&self) -> usize {
        decomposed_len(self.t_max, self.order)
    }

    /// Columns each feature contributes to fusion (`Q` with MEN, else `m`).
    pub fn feature_width(&self) -> usize {
        let m = self.series_len();
        if self.ablation.use_men2d {
            men_output_len(m, self.dilations, self.kernel_width).unwrap_or(0)
        } else {
            m
        }
    }

    /// Length of `h_dy`.
    pub fn dynamic_len(&self) -> usize {
        self.feature_width() * self.dynamic
    }
}

/// Trainable tensors. `w_y3` exists only with FODAM and `men` only with 2D MEN.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub w_s: Tensor,
    pub b_s: Tensor,
    pub men: Vec<[MenBranchParams; 3]>,
    pub w_d: Tensor,
    pub b_d: Tensor,
    pub w_y1: Tensor,
    pub w_y2: Tensor,
    pub w_y3: Option<Tensor>,
    pub b_y: Tensor,
}

const BRANCH_NAMES: [&str; 3] = ["adjacent", "short", "long"];

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.classes;
        let men = if config.ablation.use_men2d {
            (0..config.dynamic)
                .map(|_| config.dilations.map(|b| MenBranchParams::zeros(config.kernel_width, b)))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            w_s: Tensor::zeros(&[d, config.statics]),
            b_s: Tensor::zeros(&[d]),
            men,
            w_d: Tensor::zeros(&[config.ablation.fusion_rows()]),
            b_d: Tensor::zeros(&[1]),
            w_y1: Tensor::zeros(&[d, d]),
            w_y2: Tensor::zeros(&[d, config.dynamic_len()]),
            w_y3: config
                .ablation
                .use_fodam
                .then(|| Tensor::zeros(&[d, config.series_len() - 1])),
            b_y: Tensor::zeros(&[d]),
            config: config.clone(),
        })
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let fill = |t: &mut Tensor, fan_in: usize, rng: &mut dyn rand::RngCore| {
            if fan_in == 0 {
                return;
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        };
        let (d, s) = (config.classes, config.statics);
        fill(&mut params.w_s, s, rng);
        for branches in params.men.iter_mut() {
            for b in branches.iter_mut() {
                fill(&mut b.kernels, 2 * config.kernel_width, rng);
            }
        }
        fill(&mut params.w_d, config.ablation.fusion_rows(), rng);
        fill(&mut params.w_y1, d, rng);
        fill(&mut params.w_y2, config.dynamic_len(), rng);
        if let Some(w) = params.w_y3.as_mut() {
            fill(w, config.series_len() - 1, rng);
        }
        Ok(params)
    }

    /// Tensors with their names, in declaration order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("W_s".to_string(), &self.w_s), ("b_s".to_string(), &self.b_s)];
        for (f, branches) in self.men.iter().enumerate() {
            for (name, b) in BRANCH_NAMES.iter().zip(branches) {
                out.push((format!("men[{f}].{name}.kernels"), &b.kernels));
                out.push((format!("men[{f}].{name}.biases"), &b.biases));
            }
        }
        out.push(("W_d".into(), &self.w_d));
        out.push(("b_d".into(), &self.b_d));
        out.push(("W_y1".into(), &self.w_y1));
        out.push(("W_y2".into(), &self.w_y2));
        if let Some(w) = &self.w_y3 {
            out.push(("W_y3".into(), w));
        }
        out.push(("b_y".into(), &self.b_y));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w_s, &mut self.b_s];
        for branches in self.men.iter_mut() {
            for b in branches.iter_mut() {
                out.push(&mut b.kernels);
                out.push(&mut b.biases);
            }
        }
        out.push(&mut self.w_d);
        out.push(&mut self.b_d);
        out.push(&mut self.w_y1);
        out.push(&mut self.w_y2);
        if let Some(w) = self.w_y3.as_mut() {
            out.push(w);
        }
        out.push(&mut self.b_y);
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// Records every tensor as a leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let mut all = Vec::new();
        let mut leaf = |t: &Tensor, tape: &mut Tape| {
            let v = tape.leaf(t.clone());
            all.push(v);
            v
        };
        let w_s = leaf(&self.w_s, tape);
        let b_s = leaf(&self.b_s, tape);
        let men = self
            .men
            .iter()
            .map(|branches| {
                let mut out = [(w_s, w_s, 0); 3];
                for (slot, b) in out.iter_mut().zip(branches) {
                    let k = leaf(&b.kernels, tape);
                    let bias = leaf(&b.biases, tape);
                    *slot = (k, bias, b.dilation);
                }
                out
            })
            .collect();
        let w_d = leaf(&self.w_d, tape);
        let b_d = leaf(&self.b_d, tape);
        let w_y1 = leaf(&self.w_y1, tape);
        let w_y2 = leaf(&self.w_y2, tape);
        let w_y3 = self.w_y3.as_ref().map(|w| leaf(w, tape));
        let b_y = leaf(&self.b_y, tape);
        ParamVars {
            w_s,
            b_s,
            men,
            w_d,
            b_d,
            w_y1,
            w_y2,
            w_y3,
            b_y,
            all,
        }
    }
}

impl ParameterSet for ModelParams {
    fn scalar_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    fn scalar(&self, index: usize) -> f64 {
        let named = self.named();
        let (t, i) = locate(named.iter().map(|(_, t)| t.len()), index);
        named[t].1.data()[i]
    }

    fn set_scalar(&mut self, index: usize, value: f64) {
        let lens: Vec<usize> = self.named().iter().map(|(_, t)| t.len()).collect();
        let (t, i) = locate(lens.into_iter(), index);
        self.tensors_mut()[t].data_mut()[i] = value;
    }

    fn scalar_name(&self, index: usize) -> String {
        let named = self.named();
        let (t, i) = locate(named.iter().map(|(_, t)| t.len()), index);
        format!("{}[{i}]", named[t].0)
    }
}

/// Tape handles for [`ModelParams`]; `all` follows declaration order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub w_s: Var,
    pub b_s: Var,
    pub men: Vec<[(Var, Var, usize); 3]>,
    pub w_d: Var,
    pub b_d: Var,
    pub w_y1: Var,
    pub w_y2: Var,
    pub w_y3: Option<Var>,
    pub b_y: Var,
    pub all: Vec<Var>,
}

/// A patient after decomposition, ready for the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedPatient {
    pub pairs: Vec<TrendVariation>,
    pub statics: Vec<f64>,
    pub label: usize,
}

pub fn prepare(patient: &VisitMatrix, filters: &SymletFilters) -> Result<PreparedPatient> {
    Ok(PreparedPatient {
        pairs: ftm_decompose(&patient.visits, filters)?,
        statics: patient.statics.clone(),
        label: patient.label,
    })
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::LengthMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

fn embed_static_on_tape(tape: &mut Tape, vars: &ParamVars, statics: &[f64]) -> Result<Var> {
    let s = tape.leaf(Tensor::vector(statics.to_vec()));
    let z = tape.matvec(vars.w_s, s)?;
    let z = tape.add(z, vars.b_s)?;
    Ok(tape.tanh(z))
}

fn fuse_on_tape(tape: &mut Tape, vars: &ParamVars, parts: &[Var]) -> Result<Var> {
    let h_con = tape.concat(parts)?;
    let z = tape.vecmat(vars.w_d, h_con)?;
    let z = tape.add_scalar(z, vars.b_d)?;
    Ok(tape.tanh(z))
}

fn predict_on_tape(tape: &mut Tape, vars: &ParamVars, h_st: Var, h_dy: Var, h_var: Option<Var>) -> Result<Var> {
    let a = tape.matvec(vars.w_y1, h_st)?;
    let b = tape.matvec(vars.w_y2, h_dy)?;
    let mut logits = tape.add(a, b)?;
    match (vars.w_y3, h_var) {
        (Some(w), Some(h)) => {
            let c = tape.matvec(w, h)?;
            logits = tape.add(logits, c)?;
        }
        (None, None) => {}
        _ => return Err(Error::Config("attention term and W_y3 must be present together".into())),
    }
    let logits = tape.add(logits, vars.b_y)?;
    tape.softmax(logits)
}

/// Records the full forward pass for one patient; returns the probability node.
pub fn forward_on_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    config: &ModelConfig,
    patient: &PreparedPatient,
) -> Result<Var> {
    let ab = config.ablation;
    let m = config.series_len();
    check_len("dynamic features", config.dynamic, patient.pairs.len())?;
    check_len("static features", config.statics, patient.statics.len())?;
    let h_st = embed_static_on_tape(tape, vars, &patient.statics)?;

    let mut parts = Vec::with_capacity(patient.pairs.len());
    let mut h_vars = Vec::new();
    for (f, pair) in patient.pairs.iter().enumerate() {
        check_len("decomposed series", m, pair.len())?;
        let input = match (ab.use_trend, ab.use_variation) {
            (true, true) => reshape_2d(pair)?,
            (true, false) => Tensor::matrix(1, m, pair.trend.clone())?,
            _ => Tensor::matrix(1, m, pair.variation.clone())?,
        };
        let x = tape.leaf(input);
        let a = if ab.use_men2d {
            let branches = vars
                .men
                .get(f)
                .ok_or_else(|| Error::Config(format!("no MEN parameters for feature {f}")))?;
            crate::men::men_on_tape(tape, x, branches)?
        } else {
            x
        };
        parts.push(a);
        if ab.use_fodam {
            let r = tape.leaf(Tensor::vector(pair.variation.clone()));
            let (_, h) = fodam_on_tape(tape, r)?;
            h_vars.push(h);
        }
    }
    let h_dy = fuse_on_tape(tape, vars, &parts)?;
    let h_var = if ab.use_fodam {
        Some(pool_on_tape(tape, &h_vars)?)
    } else {
        None
    };
    predict_on_tape(tape, vars, h_st, h_dy, h_var)
}

/// Mean negative log-likelihood over a batch, as a scalar node.
pub fn batch_loss_on_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    config: &ModelConfig,
    batch: &[&PreparedPatient],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut total = None;
    for p in batch {
        let probs = forward_on_tape(tape, vars, config, p)?;
        let nll = tape.nll(probs, p.label)?;
        total = Some(match total {
            None => nll,
            Some(t) => tape.add(t, nll)?,
        });
    }
    let total = total.expect("batch is non-empty");
    Ok(tape.scale(total, 1.0 / batch.len() as f64))
}

/// Loss and flat gradient (declaration order) for a batch.
pub fn loss_and_gradient(params: &ModelParams, batch: &[&PreparedPatient]) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let loss = batch_loss_on_tape(&mut tape, &vars, &params.config, batch)?;
    let grads = tape.backward(loss)?;
    let value = tape.value(loss).data()[0];
    Ok((value, vars.all.iter().map(|v| grads.get(&tape, *v)).collect()))
}

/// Class probabilities for a prepared patient.
pub fn predict_prepared(params: &ModelParams, patient: &PreparedPatient) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let probs = forward_on_tape(&mut tape, &vars, &params.config, patient)?;
    Ok(tape.value(probs).data().to_vec())
}

/// Class probabilities for a padded visit matrix and static vector.
pub fn forward(visits: &Tensor, statics: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let config = &params.config;
    if visits.shape() != [config.t_max, config.dynamic] {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: visits.shape().to_vec(),
            rhs: vec![config.t_max, config.dynamic],
        });
    }
    let filters = symlet_filters(config.order)?;
    let patient = PreparedPatient {
        pairs: ftm_decompose(visits, &filters)?,
        statics: statics.to_vec(),
        label: 0,
    };
    predict_prepared(params, &patient)
}

/// `tanh(W_s s + b_s)`.
pub fn embed_static(statics: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let h = embed_static_on_tape(&mut tape, &vars, statics)?;
    Ok(tape.value(h).data().to_vec())
}

/// `tanh(W_d · h_con + b_d)` where `h_con` concatenates the per-feature blocks
/// column-wise.
pub fn fuse_dynamic(blocks: &[Tensor], params: &ModelParams) -> Result<Vec<f64>> {
    if let Some(first) = blocks.first() {
        if let Some(bad) = blocks.iter().find(|b| b.shape() != first.shape()) {
            return Err(Error::ShapeMismatch {
                op: "fuse_dynamic",
                lhs: first.shape().to_vec(),
                rhs: bad.shape().to_vec(),
            });
        }
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let parts: Vec<Var> = blocks.iter().map(|b| tape.leaf(b.clone())).collect();
    let h = fuse_on_tape(&mut tape, &vars, &parts)?;
    Ok(tape.value(h).data().to_vec())
}

/// `softmax(W_y1 h_st + W_y2 h_dy + W_y3 h_var + b_y)`; `h_var` must be given
/// exactly when the model has FODAM.
pub fn predict(h_st: &[f64], h_dy: &[f64], h_var: Option<&[f64]>, params: &ModelParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let st = tape.leaf(Tensor::vector(h_st.to_vec()));
    let dy = tape.leaf(Tensor::vector(h_dy.to_vec()));
    let var = h_var.map(|h| tape.leaf(Tensor::vector(h.to_vec())));
    let p = predict_on_tape(&mut tape, &vars, st, dy, var)?;
    Ok(tape.value(p).data().to_vec())
}

/// Mean `-ln p_true` over rows of predicted probabilities and one-hot targets.
pub fn cross_entropy(probs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    check_len("cross-entropy targets", probs.len(), targets.len())?;
    if probs.is_empty() {
        return Err(Error::Data("cross-entropy over an empty batch".into()));
    }
    let mut total = 0.0;
    for (i, (p, y)) in probs.iter().zip(targets).enumerate() {
        check_len("cross-entropy row", p.len(), y.len())?;
        let hot: Vec<usize> = y
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect();
        if hot.len() != 1 || y[hot[0]] != 1.0 {
            return Err(Error::Data(format!("target row {i} is not one-hot")));
        }
        total -= p[hot[0]].max(PROB_FLOOR).ln();
    }
    Ok(total / probs.len() as f64)
}
