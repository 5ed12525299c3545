//! Dilated-convolution extraction over the stacked trend/variation tensor.
//!
//! Each branch applies two kernels spanning both rows of the `2 × m` input, so
//! every output mixes trend and variation. Three branches with increasing
//! dilation (adjacent, short-term, long-term) are concatenated column-wise.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::wavelet::TrendVariation;

/// Dilation rates for the adjacent, short-term, and long-term branches.
pub const DEFAULT_DILATIONS: [usize; 3] = [0, 1, 3];
pub const DEFAULT_KERNEL_WIDTH: usize = 2;

/// Stacks trend over variation into a `[2, m]` tensor.
pub fn reshape_2d(pair: &TrendVariation) -> Result<Tensor> {
    if pair.trend.len() != pair.variation.len() {
        return Err(Error::LengthMismatch {
            context: "trend/variation stacking",
            expected: pair.trend.len(),
            found: pair.variation.len(),
        });
    }
    let m = pair.trend.len();
    let mut data = pair.trend.clone();
    data.extend_from_slice(&pair.variation);
    Tensor::matrix(2, m, data)
}

/// Parameters of one dilated branch: kernels `[2, 2, width]` (output row,
/// input row, tap) and one bias per output row.
#[derive(Clone, Debug, PartialEq)]
pub struct MenBranchParams {
    pub kernels: Tensor,
    pub biases: Tensor,
    pub dilation: usize,
}

impl MenBranchParams {
    pub fn zeros(width: usize, dilation: usize) -> Self {
        Self {
            kernels: Tensor::zeros(&[2, 2, width]),
            biases: Tensor::zeros(&[2]),
            dilation,
        }
    }

    pub fn width(&self) -> usize {
        self.kernels.shape()[2]
    }
}

/// Output columns of a branch, or `None` when the series is too short.
pub fn branch_output_len(m: usize, dilation: usize, width: usize) -> Option<usize> {
    let span = dilation * width.saturating_sub(1);
    (width >= 1 && m > span).then(|| m - span)
}

/// Smallest series length a branch accepts.
pub fn branch_min_len(dilation: usize, width: usize) -> usize {
    dilation * width.saturating_sub(1) + 1
}

/// Records one branch on `tape`; `activate` applies Tanh to the output.
pub fn branch_on_tape(
    tape: &mut Tape,
    input: Var,
    kernels: Var,
    biases: Var,
    dilation: usize,
    activate: bool,
) -> Result<Var> {
    let m = tape.shape(input).get(1).copied().unwrap_or(0);
    let width = tape.shape(kernels).get(2).copied().unwrap_or(0);
    if branch_output_len(m, dilation, width).is_none() {
        return Err(Error::Config(format!(
            "series of length {m} is too short for kernel width {width} at dilation {dilation}; need at least {}",
            branch_min_len(dilation, width)
        )));
    }
    let pre = tape.dilated_conv(input, kernels, biases, dilation)?;
    Ok(if activate { tape.tanh(pre) } else { pre })
}

fn eval_branch(d: &Tensor, params: &MenBranchParams, activate: bool) -> Result<Tensor> {
    check_input(d)?;
    let mut tape = Tape::new();
    let x = tape.leaf(d.clone());
    let g = tape.leaf(params.kernels.clone());
    let b = tape.leaf(params.biases.clone());
    let out = branch_on_tape(&mut tape, x, g, b, params.dilation, activate)?;
    Ok(tape.value(out).clone())
}

fn check_input(d: &Tensor) -> Result<()> {
    if d.shape().len() != 2 || d.shape()[0] != 2 {
        return Err(Error::ShapeMismatch {
            op: "men2d input",
            lhs: d.shape().to_vec(),
            rhs: vec![2, 0],
        });
    }
    Ok(())
}

/// One branch with Tanh applied: `[2, m] -> [2, q]`, `q = m - dilation·(width - 1)`.
pub fn dilated_conv_branch(d: &Tensor, params: &MenBranchParams) -> Result<Tensor> {
    eval_branch(d, params, true)
}

/// Same as [`dilated_conv_branch`] without the activation.
pub fn dilated_conv_branch_linear(d: &Tensor, params: &MenBranchParams) -> Result<Tensor> {
    eval_branch(d, params, false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MenOutput {
    pub adjacent: Tensor,
    pub short: Tensor,
    pub long: Tensor,
    /// Column-wise concatenation of the three branches.
    pub fused: Tensor,
}

/// Total output columns for the three branches over a length-`m` series.
pub fn men_output_len(m: usize, dilations: [usize; 3], width: usize) -> Option<usize> {
    dilations
        .iter()
        .map(|&b| branch_output_len(m, b, width))
        .sum()
}

/// Records all three branches and their concatenation; returns the `[2, Q]` node.
pub fn men_on_tape(tape: &mut Tape, input: Var, branches: &[(Var, Var, usize); 3]) -> Result<Var> {
    let mut outs = Vec::with_capacity(3);
    for &(g, b, dilation) in branches {
        outs.push(branch_on_tape(tape, input, g, b, dilation, true)?);
    }
    tape.concat(&outs)
}

pub fn men_forward(d: &Tensor, branches: &[MenBranchParams; 3]) -> Result<MenOutput> {
    check_input(d)?;
    let adjacent = dilated_conv_branch(d, &branches[0])?;
    let short = dilated_conv_branch(d, &branches[1])?;
    let long = dilated_conv_branch(d, &branches[2])?;
    let (qa, qs, ql) = (adjacent.cols(), short.cols(), long.cols());
    let mut data = Vec::with_capacity(2 * (qa + qs + ql));
    for r in 0..2 {
        data.extend_from_slice(adjacent.row(r));
        data.extend_from_slice(short.row(r));
        data.extend_from_slice(long.row(r));
    }
    let fused = Tensor::matrix(2, qa + qs + ql, data)?;
    Ok(MenOutput {
        adjacent,
        short,
        long,
        fused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent nested-loop reference for one pre-activation branch.
    fn brute_force(d: &Tensor, params: &MenBranchParams) -> Vec<Vec<f64>> {
        let m = d.cols();
        let width = params.width();
        let b = params.dilation;
        let q = m - b * (width - 1);
        let g = params.kernels.data();
        let mut out = vec![vec![0.0; q]; 2];
        for (p, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..2 {
                    for l in 0..width {
                        acc += d.at(k, j + b * l) * g[p * 2 * width + k * width + l];
                    }
                }
                *cell = acc + params.biases.data()[p];
            }
        }
        out
    }

    fn identity_params(dilation: usize) -> MenBranchParams {
        MenBranchParams {
            kernels: Tensor::new(vec![2, 2, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            biases: Tensor::zeros(&[2]),
            dilation,
        }
    }

    fn example_input() -> Tensor {
        Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap()
    }

    #[test]
    fn reshape_examples() {
        let pair = TrendVariation {
            trend: vec![1.0, 2.0],
            variation: vec![3.0, 4.0],
        };
        let d = reshape_2d(&pair).unwrap();
        assert_eq!(d.shape(), &[2, 2]);
        assert_eq!(d.data(), &[1.0, 2.0, 3.0, 4.0]);

        let one = TrendVariation {
            trend: vec![1.0],
            variation: vec![2.0],
        };
        assert_eq!(reshape_2d(&one).unwrap().shape(), &[2, 1]);

        let bad = TrendVariation {
            trend: vec![1.0],
            variation: vec![2.0, 3.0],
        };
        assert!(reshape_2d(&bad).is_err());
    }

    #[test]
    fn dilation_one_example() {
        let out = dilated_conv_branch_linear(&example_input(), &identity_params(1)).unwrap();
        assert_eq!(out.row(0), &[7.0, 9.0, 11.0]);
    }

    #[test]
    fn dilation_zero_is_pointwise() {
        let out = dilated_conv_branch_linear(&example_input(), &identity_params(0)).unwrap();
        assert_eq!(out.row(0), &[6.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn zero_kernels_give_zero_output() {
        let out = dilated_conv_branch(&example_input(), &MenBranchParams::zeros(2, 3)).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn too_short_names_minimum() {
        let d = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let err = dilated_conv_branch(&d, &MenBranchParams::zeros(2, 3)).unwrap_err();
        assert!(err.to_string().contains("at least 4"), "{err}");
    }

    #[test]
    fn forward_shapes() {
        let d = Tensor::matrix(2, 22, (0..44).map(|i| i as f64 * 0.1).collect()).unwrap();
        let branches = DEFAULT_DILATIONS.map(|b| MenBranchParams::zeros(2, b));
        let out = men_forward(&d, &branches).unwrap();
        assert_eq!(out.fused.shape(), &[2, 62]);
        assert_eq!(men_output_len(22, DEFAULT_DILATIONS, 2), Some(62));

        let d4 = example_input();
        let out = men_forward(&d4, &branches).unwrap();
        assert_eq!(out.long.cols(), 1);
    }

    #[test]
    fn fused_is_ordered_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Tensor::matrix(2, 12, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let branches = DEFAULT_DILATIONS.map(|b| MenBranchParams {
            kernels: Tensor::new(vec![2, 2, 2], (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap(),
            biases: Tensor::vector(vec![0.1, -0.2]),
            dilation: b,
        });
        let out = men_forward(&d, &branches).unwrap();
        for r in 0..2 {
            let expected: Vec<f64> = [&out.adjacent, &out.short, &out.long]
                .iter()
                .flat_map(|t| t.row(r).to_vec())
                .collect();
            assert_eq!(out.fused.row(r), expected.as_slice());
        }
        let same = MenBranchParams {
            dilation: 1,
            ..branches[0].clone()
        };
        assert_eq!(
            dilated_conv_branch(&d, &same).unwrap(),
            dilated_conv_branch(&d, &same).unwrap()
        );
    }

    #[test]
    fn output_length_sweep() {
        for m in 4..=40 {
            for b in [0, 1, 3] {
                for width in 1..=3 {
                    let d = Tensor::matrix(2, m, vec![0.5; 2 * m]).unwrap();
                    let params = MenBranchParams::zeros(width, b);
                    match branch_output_len(m, b, width) {
                        Some(q) => {
                            assert_eq!(q, m - b * (width - 1));
                            assert_eq!(dilated_conv_branch(&d, &params).unwrap().shape(), &[2, q]);
                        }
                        None => assert!(dilated_conv_branch(&d, &params).is_err()),
                    }
                }
            }
        }
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let width = rng.random_range(1..=3);
            let b = [0, 1, 3][rng.random_range(0..3)];
            let m = rng.random_range(branch_min_len(b, width)..=40);
            let d = Tensor::matrix(2, m, (0..2 * m).map(|_| rng.random_range(-2.0..2.0)).collect())
                .unwrap();
            let params = MenBranchParams {
                kernels: Tensor::new(
                    vec![2, 2, width],
                    (0..4 * width).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap(),
                biases: Tensor::vector(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
                dilation: b,
            };
            let got = dilated_conv_branch_linear(&d, &params).unwrap();
            let expected = brute_force(&d, &params);
            for p in 0..2 {
                for (a, e) in got.row(p).iter().zip(&expected[p]) {
                    assert!((a - e).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn pre_activation_is_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = Tensor::matrix(2, 10, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let params = MenBranchParams {
            kernels: Tensor::new(vec![2, 2, 2], (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap(),
            biases: Tensor::zeros(&[2]),
            dilation: 1,
        };
        let alpha = -2.5;
        let scaled = Tensor::matrix(2, 10, d.data().iter().map(|v| v * alpha).collect()).unwrap();
        let base = dilated_conv_branch_linear(&d, &params).unwrap();
        let out = dilated_conv_branch_linear(&scaled, &params).unwrap();
        for (a, b) in out.data().iter().zip(base.data()) {
            assert!((a - alpha * b).abs() <= 1e-12);
        }
    }

    #[test]
    fn variation_row_reaches_output() {
        let params = MenBranchParams {
            kernels: Tensor::new(vec![2, 2, 2], vec![0.0, 0.0, 0.7, -0.3, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            biases: Tensor::zeros(&[2]),
            dilation: 1,
        };
        let d = example_input();
        let mut bumped = d.clone();
        bumped.data_mut()[5] += 0.25;
        let a = dilated_conv_branch(&d, &params).unwrap();
        let b = dilated_conv_branch(&bumped, &params).unwrap();
        assert_ne!(a.row(0), b.row(0));
    }
}
