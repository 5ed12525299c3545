//! Single-level symlet decomposition of visit series into a low-frequency
//! trend and a high-frequency variation component.
//!
//! Analysis uses half-sample symmetric extension with `F - 1` samples of
//! padding on each side (`F = 2K` taps), then correlates with the filters and
//! keeps every second output. A length-`t` series yields
//! `m = (t + F - 1) / 2` coefficients per component.

mod table;

use std::sync::OnceLock;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MIN_ORDER: usize = 2;
pub const MAX_ORDER: usize = 20;

/// Analysis filter pair for one symlet order.
#[derive(Clone, Debug, PartialEq)]
pub struct SymletFilters {
    order: usize,
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
}

impl SymletFilters {
    /// Number of vanishing moments.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn taps(&self) -> usize {
        self.lowpass.len()
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass(&self) -> &[f64] {
        &self.highpass
    }
}

/// Checks the four defining properties of an orthonormal wavelet filter pair.
pub fn check_filter_invariants(f: &SymletFilters) -> Result<()> {
    let (h, g) = (&f.lowpass, &f.highpass);
    let taps = h.len();
    let fail = |what: String| Err(Error::Numerical(format!("sym{}: {what}", f.order)));

    let sum: f64 = h.iter().sum();
    if (sum - std::f64::consts::SQRT_2).abs() > 1e-12 {
        return fail(format!("lowpass sums to {sum}"));
    }
    let energy: f64 = h.iter().map(|v| v * v).sum();
    if (energy - 1.0).abs() > 1e-12 {
        return fail(format!("lowpass energy is {energy}"));
    }
    for n in 0..taps {
        let mirrored = if n % 2 == 0 { h[taps - 1 - n] } else { -h[taps - 1 - n] };
        if g[n] != mirrored {
            return fail(format!("highpass tap {n} breaks the mirror relation"));
        }
    }
    for p in 0..f.order {
        let moment: f64 = g.iter().enumerate().map(|(n, v)| (n as f64).powi(p as i32) * v).sum();
        if moment.abs() > 1e-7 * (taps as f64).powi(p as i32) {
            return fail(format!("moment {p} of the highpass is {moment}"));
        }
    }
    Ok(())
}

fn build(order: usize) -> Result<SymletFilters> {
    let lowpass = table::SYMLET_LOWPASS[order - MIN_ORDER].to_vec();
    let taps = lowpass.len();
    let highpass = (0..taps)
        .map(|n| if n % 2 == 0 { lowpass[taps - 1 - n] } else { -lowpass[taps - 1 - n] })
        .collect();
    let filters = SymletFilters {
        order,
        lowpass,
        highpass,
    };
    check_filter_invariants(&filters)?;
    Ok(filters)
}

/// Filter pair for `order` vanishing moments. Table entries are validated the
/// first time they are requested.
pub fn symlet_filters(order: usize) -> Result<SymletFilters> {
    static CACHE: OnceLock<Vec<std::result::Result<SymletFilters, String>>> = OnceLock::new();
    if !(MIN_ORDER..=MAX_ORDER).contains(&order) {
        return Err(Error::SymletOrder(order));
    }
    let cache = CACHE.get_or_init(|| {
        (MIN_ORDER..=MAX_ORDER)
            .map(|k| build(k).map_err(|e| e.to_string()))
            .collect()
    });
    cache[order - MIN_ORDER].clone().map_err(Error::Numerical)
}

/// Index into a length-`t` signal for position `i` of its periodic
/// half-sample symmetric extension (`..., x1, x0 | x0, x1, ...`).
fn reflect(i: isize, t: usize) -> usize {
    let period = 2 * t as isize;
    let k = i.rem_euclid(period) as usize;
    if k < t {
        k
    } else {
        2 * t - 1 - k
    }
}

/// Pads `x` by `pad` samples on each side with half-sample symmetric
/// reflection. Pads longer than the signal keep reflecting.
pub fn symmetric_extend(x: &[f64], pad: usize) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Data("cannot extend an empty signal".into()));
    }
    let t = x.len();
    Ok((0..t + 2 * pad)
        .map(|i| x[reflect(i as isize - pad as isize, t)])
        .collect())
}

/// Coefficients per component for a length-`t` series at the given order.
pub fn decomposed_len(t: usize, order: usize) -> usize {
    (t + 2 * order - 1) / 2
}

/// Trend (low-pass) and variation (high-pass) coefficients of one series.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendVariation {
    pub trend: Vec<f64>,
    pub variation: Vec<f64>,
}

impl TrendVariation {
    pub fn len(&self) -> usize {
        self.trend.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trend.is_empty()
    }
}

pub fn dwt_single_level(x: &[f64], filters: &SymletFilters) -> Result<TrendVariation> {
    let taps = filters.taps();
    let ext = symmetric_extend(x, taps - 1)?;
    let m = decomposed_len(x.len(), filters.order);
    let mut trend = Vec::with_capacity(m);
    let mut variation = Vec::with_capacity(m);
    for o in 0..m {
        let window = &ext[2 * o + 1..2 * o + 1 + taps];
        trend.push(window.iter().zip(&filters.lowpass).map(|(a, b)| a * b).sum());
        variation.push(window.iter().zip(&filters.highpass).map(|(a, b)| a * b).sum());
    }
    Ok(TrendVariation { trend, variation })
}

/// Synthesis counterpart of [`dwt_single_level`]; recovers the original
/// length-`t` series.
pub fn idwt_single_level(
    pair: &TrendVariation,
    filters: &SymletFilters,
    t: usize,
) -> Result<Vec<f64>> {
    let m = decomposed_len(t, filters.order);
    for found in [pair.trend.len(), pair.variation.len()] {
        if found != m {
            return Err(Error::LengthMismatch {
                context: "inverse transform coefficients",
                expected: m,
                found,
            });
        }
    }
    let taps = filters.taps();
    // Only the extended positions covering the original samples are needed.
    let mut out = vec![0.0; t];
    for (o, (a, d)) in pair.trend.iter().zip(&pair.variation).enumerate() {
        for n in 0..taps {
            let e = 2 * o + 1 + n;
            if e < taps - 1 || e >= taps - 1 + t {
                continue;
            }
            out[e - (taps - 1)] += a * filters.lowpass[n] + d * filters.highpass[n];
        }
    }
    Ok(out)
}

/// Decomposes every column of a `[t, c]` visit matrix, in column order.
pub fn ftm_decompose(visits: &Tensor, filters: &SymletFilters) -> Result<Vec<TrendVariation>> {
    let shape = visits.shape();
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(Error::Data(format!(
            "visit matrix must have at least one row and one column, got shape {shape:?}"
        )));
    }
    let (t, c) = (shape[0], shape[1]);
    for r in 0..t {
        for col in 0..c {
            if !visits.at(r, col).is_finite() {
                return Err(Error::NonFinite {
                    what: format!("in visit matrix at row {r}, column {col}"),
                });
            }
        }
    }
    (0..c)
        .map(|col| {
            let column: Vec<f64> = (0..t).map(|r| visits.at(r, col)).collect();
            dwt_single_level(&column, filters)
        })
        .collect()
}
