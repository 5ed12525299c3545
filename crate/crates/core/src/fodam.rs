//! Attention over first-order differences of the variation series.
//!
//! Each difference `Δ[i] = R[i+1] - R[i]` is scored by `Δ[i]² / √dim`, the
//! scores are normalized with a softmax, and the weighted differences
//! `α ⊙ Δ` form the representation. `dim` is the length of `R`.

use crate::autodiff::{softmax, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FodamOutput {
    pub delta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub h_var: Vec<f64>,
}

pub fn first_order_diff(r: &[f64]) -> Result<Vec<f64>> {
    if r.len() < 2 {
        return Err(Error::Data(format!(
            "first-order differences need at least 2 values, got {}",
            r.len()
        )));
    }
    Ok(r.windows(2).map(|w| w[1] - w[0]).collect())
}

pub fn fodam_attention(delta: &[f64], dim: usize) -> Result<Vec<f64>> {
    if let Some(i) = delta.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("in difference vector at position {i}"),
        });
    }
    if delta.is_empty() || dim == 0 {
        return Err(Error::Data("attention over an empty difference vector".into()));
    }
    let scale = (dim as f64).sqrt();
    let scores: Vec<f64> = delta.iter().map(|d| d * d / scale).collect();
    Ok(softmax(&scores))
}

pub fn fodam_forward(r: &[f64]) -> Result<FodamOutput> {
    let delta = first_order_diff(r)?;
    let alpha = fodam_attention(&delta, r.len())?;
    let h_var = alpha.iter().zip(&delta).map(|(a, d)| a * d).collect();
    Ok(FodamOutput { delta, alpha, h_var })
}

/// Records the attention on `tape` for a variation vector node `r`.
/// Returns `(alpha, h_var)`.
pub fn fodam_on_tape(tape: &mut Tape, r: Var) -> Result<(Var, Var)> {
    let dim = tape.shape(r).first().copied().unwrap_or(0);
    let delta = tape.diff(r)?;
    let sq = tape.mul(delta, delta)?;
    let scores = tape.scale(sq, 1.0 / (dim as f64).sqrt());
    let alpha = tape.softmax(scores)?;
    let h_var = tape.mul(alpha, delta)?;
    Ok((alpha, h_var))
}

/// Elementwise mean of per-feature `h_var` vectors.
pub fn fodam_pool(outputs: &[FodamOutput]) -> Result<Vec<f64>> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::Data("nothing to pool".into()))?;
    let n = first.h_var.len();
    let mut pooled = vec![0.0; n];
    for o in outputs {
        if o.h_var.len() != n {
            return Err(Error::LengthMismatch {
                context: "attention pooling",
                expected: n,
                found: o.h_var.len(),
            });
        }
        for (p, v) in pooled.iter_mut().zip(&o.h_var) {
            *p += v;
        }
    }
    let c = outputs.len() as f64;
    Ok(pooled.into_iter().map(|v| v / c).collect())
}

/// Tape counterpart of [`fodam_pool`].
pub fn pool_on_tape(tape: &mut Tape, h_vars: &[Var]) -> Result<Var> {
    let (first, rest) = h_vars
        .split_first()
        .ok_or_else(|| Error::Data("nothing to pool".into()))?;
    let mut acc = *first;
    for v in rest {
        acc = tape.add(acc, *v)?;
    }
    Ok(tape.scale(acc, 1.0 / h_vars.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::autodiff::{finite_diff_check, Tensor};

    #[test]
    fn difference_examples() {
        assert_eq!(first_order_diff(&[1.0, 3.0, 2.0]).unwrap(), vec![2.0, -1.0]);
        assert_eq!(first_order_diff(&[4.0; 5]).unwrap(), vec![0.0; 4]);
        assert_eq!(first_order_diff(&[0.0, 5.0]).unwrap(), vec![5.0]);
        assert!(first_order_diff(&[1.0]).is_err());
    }

    #[test]
    fn attention_examples() {
        let uniform = fodam_attention(&[1.7; 4], 5).unwrap();
        assert!(uniform.iter().all(|a| (a - 0.25).abs() < 1e-15));

        // Frozen from a 30-digit evaluation of softmax([4/√3, 1/√3]).
        let a = fodam_attention(&[2.0, -1.0], 3).unwrap();
        assert!((a[0] - 0.849674553089838574).abs() < 1e-15);
        assert!((a[1] - 0.150325446910161425).abs() < 1e-15);

        assert_eq!(fodam_attention(&[0.0], 2).unwrap(), vec![1.0]);
        assert!(fodam_attention(&[1.0, f64::INFINITY], 3).is_err());
    }

    #[test]
    fn forward_examples() {
        let out = fodam_forward(&[1.0, 3.0, 2.0]).unwrap();
        assert_eq!(out.delta, vec![2.0, -1.0]);
        assert!((out.h_var[0] - 1.699349106179677149).abs() < 1e-14);
        assert!((out.h_var[1] + 0.150325446910161425).abs() < 1e-14);

        let flat = fodam_forward(&[2.5; 6]).unwrap();
        assert!(flat.h_var.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pool_examples() {
        let v = fodam_forward(&[1.0, 3.0, 2.0, 0.5]).unwrap();
        assert_eq!(fodam_pool(std::slice::from_ref(&v)).unwrap(), v.h_var);

        let neg = FodamOutput {
            h_var: v.h_var.iter().map(|x| -x).collect(),
            ..v.clone()
        };
        assert!(fodam_pool(&[v.clone(), neg]).unwrap().iter().all(|x| *x == 0.0));

        let pooled = fodam_pool(&[v.clone(), v.clone(), v.clone()]).unwrap();
        for (a, b) in pooled.iter().zip(&v.h_var) {
            assert!((a - b).abs() < 1e-15);
        }

        let short = fodam_forward(&[1.0, 2.0]).unwrap();
        assert!(fodam_pool(&[v, short]).is_err());
    }

    #[test]
    fn tape_matches_direct_evaluation() {
        let r = vec![0.3, -1.0, 2.2, 0.4, 0.9];
        let direct = fodam_forward(&r).unwrap();
        let mut tape = Tape::new();
        let rv = tape.leaf(Tensor::vector(r));
        let (alpha, h) = fodam_on_tape(&mut tape, rv).unwrap();
        for (a, b) in tape.value(alpha).data().iter().zip(&direct.alpha) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in tape.value(h).data().iter().zip(&direct.h_var) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_wrt_variation_passes_fd_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let m = rng.random_range(2..12);
            let r: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let weights: Vec<f64> = (0..m - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut params = vec![Tensor::vector(r)];
            let report = finite_diff_check(
                &mut params,
                |p: &Vec<Tensor>| {
                    let mut tape = Tape::new();
                    let rv = tape.leaf(p[0].clone());
                    let (_, h) = fodam_on_tape(&mut tape, rv)?;
                    let w = tape.leaf(Tensor::vector(weights.clone()));
                    let prod = tape.mul(h, w)?;
                    let loss = tape.sum(prod);
                    let g = tape.backward(loss)?;
                    Ok((tape.value(loss).data()[0], g.get(&tape, rv).into_data()))
                },
                m,
                1e-5,
                3,
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-4, "{report:?}");
        }
    }

    proptest! {
        #[test]
        fn alpha_is_a_distribution(delta in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let a = fodam_attention(&delta, delta.len() + 1).unwrap();
            prop_assert!(a.iter().all(|v| *v >= 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn alpha_ignores_sign(delta in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let neg: Vec<f64> = delta.iter().map(|v| -v).collect();
            prop_assert_eq!(
                fodam_attention(&delta, delta.len() + 1).unwrap(),
                fodam_attention(&neg, delta.len() + 1).unwrap()
            );
        }

        #[test]
        fn h_var_keeps_sign_of_delta(r in proptest::collection::vec(-10.0f64..10.0, 2..30)) {
            let out = fodam_forward(&r).unwrap();
            for (h, d) in out.h_var.iter().zip(&out.delta) {
                prop_assert!(h * d >= 0.0);
            }
        }
    }
}
