//! Randomized finite-difference cases for every primitive in [`PRIMITIVES`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{multi_head_attention, AttentionParams};
use crate::error::{Result, TensorError};
use crate::gradcheck::{GradCheck, GradCheckReport};
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::PRIMITIVES;

type Case = (Vec<(String, Tensor<f64>)>, Tensor<f64>);

fn named(items: Vec<(&str, Tensor<f64>)>) -> Vec<(String, Tensor<f64>)> {
    items.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), lo, hi, rng)
}

/// Values with magnitude in `[margin, 1]` and random sign, keeping
/// finite-difference probes clear of kinks at zero.
fn away_from_zero(shape: &[usize], margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(margin..1.0);
        if rng.gen_bool(0.5) { m } else { -m }
    })
}

/// Projects `out` onto fixed random weights so every output coordinate
/// contributes to the checked scalar.
fn project<'t>(out: Var<'t, f64>, weights: &Tensor<f64>) -> Result<Var<'t, f64>> {
    out.mul_const(weights)?.sum()
}

/// Runs one randomized gradient check of `primitive`.
pub fn check_primitive(primitive: &str, trial: u64, check: &GradCheck) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed ^ (trial.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    let proj = |shape: &[usize]| uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(trial + 17));
    let (inputs, weights): Case = match primitive {
        "conv2d" => {
            let (k, stride, pad) = [(3, 1, 1), (3, 2, 1), (1, 1, 0), (3, 1, 0)][trial as usize % 4];
            let x = uniform(&[2, 3, 5, 4], -1.0, 1.0, &mut rng);
            let w = uniform(&[4, 3, k, k], -0.5, 0.5, &mut rng);
            let b = uniform(&[4], -0.5, 0.5, &mut rng);
            let ho = (5 + 2 * pad - k) / stride + 1;
            let wo = (4 + 2 * pad - k) / stride + 1;
            let inputs = named(vec![("x", x), ("weight", w), ("bias", b)]);
            let weights = proj(&[2, 4, ho, wo]);
            return check.run(&inputs, |v| project(v[0].conv2d(&v[1], &v[2], stride, pad)?, &weights));
        }
        "batch_norm_train" => {
            let inputs = named(vec![
                ("x", uniform(&[2, 3, 3, 4], -2.0, 2.0, &mut rng)),
                ("gamma", uniform(&[3], 0.5, 1.5, &mut rng)),
                ("beta", uniform(&[3], -0.5, 0.5, &mut rng)),
            ]);
            let weights = proj(&[2, 3, 3, 4]);
            return check.run(&inputs, |v| project(v[0].batch_norm_train(&v[1], &v[2], 1e-5)?.0, &weights));
        }
        "batch_norm_eval" => {
            let mean: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();
            let inputs = named(vec![
                ("x", uniform(&[2, 3, 3, 4], -2.0, 2.0, &mut rng)),
                ("gamma", uniform(&[3], 0.5, 1.5, &mut rng)),
                ("beta", uniform(&[3], -0.5, 0.5, &mut rng)),
            ]);
            let weights = proj(&[2, 3, 3, 4]);
            return check.run(&inputs, |v| project(v[0].batch_norm_eval(&v[1], &v[2], &mean, &var, 1e-5)?, &weights));
        }
        "leaky_relu" => (named(vec![("x", away_from_zero(&[2, 3, 4], 0.05, &mut rng))]), proj(&[2, 3, 4])),
        "avg_pool" => (named(vec![("x", uniform(&[1, 2, 7, 6], -1.0, 1.0, &mut rng))]), proj(&[1, 2, 4, 3])),
        "bicubic_upsample_x2" => (named(vec![("x", uniform(&[1, 2, 3, 4], -1.0, 1.0, &mut rng))]), proj(&[1, 2, 6, 8])),
        "linear" => (
            named(vec![
                ("x", uniform(&[2, 3, 5], -1.0, 1.0, &mut rng)),
                ("weight", uniform(&[4, 5], -0.5, 0.5, &mut rng)),
                ("bias", uniform(&[4], -0.5, 0.5, &mut rng)),
            ]),
            proj(&[2, 3, 4]),
        ),
        "layer_norm" => (
            named(vec![
                ("x", uniform(&[3, 6], -2.0, 2.0, &mut rng)),
                ("gamma", uniform(&[6], 0.5, 1.5, &mut rng)),
                ("beta", uniform(&[6], -0.5, 0.5, &mut rng)),
            ]),
            proj(&[3, 6]),
        ),
        "multi_head_attention" => {
            let d = 8;
            let mut items = vec![("x".to_string(), uniform(&[5, d], -1.0, 1.0, &mut rng))];
            for name in ["q", "k", "v", "out"] {
                items.push((format!("{name}_weight"), uniform(&[d, d], -0.5, 0.5, &mut rng)));
                items.push((format!("{name}_bias"), uniform(&[d], -0.2, 0.2, &mut rng)));
            }
            (items, proj(&[5, d]))
        }
        "softmax_channels" => (named(vec![("x", uniform(&[2, 4, 3, 3], -2.0, 2.0, &mut rng))]), proj(&[2, 4, 3, 3])),
        "sigmoid" => (named(vec![("x", uniform(&[3, 4], -3.0, 3.0, &mut rng))]), proj(&[3, 4])),
        "log" => (named(vec![("x", uniform(&[3, 4], 0.5, 2.0, &mut rng))]), proj(&[3, 4])),
        "clamp" => {
            let x = Tensor::from_fn(vec![3, 4], |_| match rng.gen_range(0..3) {
                0 => rng.gen_range(-0.5..0.15),
                1 => rng.gen_range(0.25..0.75),
                _ => rng.gen_range(0.85..1.5),
            });
            (named(vec![("x", x)]), proj(&[3, 4]))
        }
        "matmul" => (
            named(vec![
                ("a", uniform(&[2, 3, 4], -1.0, 1.0, &mut rng)),
                ("b", uniform(&[2, 4, 5], -1.0, 1.0, &mut rng)),
            ]),
            proj(&[2, 3, 5]),
        ),
        "permute" => (named(vec![("x", uniform(&[2, 3, 4], -1.0, 1.0, &mut rng))]), proj(&[4, 2, 3])),
        "concat" => (
            named(vec![
                ("a", uniform(&[2, 1, 3], -1.0, 1.0, &mut rng)),
                ("b", uniform(&[2, 2, 3], -1.0, 1.0, &mut rng)),
            ]),
            proj(&[2, 3, 3]),
        ),
        "sum_axis" => (named(vec![("x", uniform(&[2, 3, 4], -1.0, 1.0, &mut rng))]), proj(&[2, 1, 4])),
        "mul" => (
            named(vec![
                ("a", uniform(&[3, 4], -1.0, 1.0, &mut rng)),
                ("b", uniform(&[3, 4], -1.0, 1.0, &mut rng)),
            ]),
            proj(&[3, 4]),
        ),
        "mul_scalar_var" => (
            named(vec![
                ("x", uniform(&[3, 4], -1.0, 1.0, &mut rng)),
                ("s", uniform(&[1], -1.0, 1.0, &mut rng)),
            ]),
            proj(&[3, 4]),
        ),
        other => return Err(TensorError::Config(format!("no gradient case for primitive {other:?}"))),
    };
    let name = primitive.to_string();
    check.run(&inputs, |v| {
        let out = match name.as_str() {
            "leaky_relu" => v[0].leaky_relu(0.01)?,
            "avg_pool" => v[0].avg_pool(3, 2, 1)?,
            "bicubic_upsample_x2" => v[0].upsample_bicubic_x2(crate::DEFAULT_CUBIC_A)?,
            "linear" => v[0].linear(&v[1], &v[2])?,
            "layer_norm" => v[0].layer_norm(&v[1], &v[2], 1e-5)?,
            "multi_head_attention" => {
                let p = AttentionParams {
                    q_weight: v[1],
                    q_bias: v[2],
                    k_weight: v[3],
                    k_bias: v[4],
                    v_weight: v[5],
                    v_bias: v[6],
                    out_weight: v[7],
                    out_bias: v[8],
                };
                multi_head_attention(&v[0], &p, 2)?
            }
            "softmax_channels" => v[0].softmax(1)?,
            "sigmoid" => v[0].sigmoid()?,
            "log" => v[0].log()?,
            "clamp" => v[0].clamp(0.2, 0.8)?,
            "matmul" => v[0].matmul(&v[1])?,
            "permute" => v[0].permute(&[2, 0, 1])?,
            "concat" => Var::concat(&[v[0], v[1]], 1)?,
            "sum_axis" => v[0].sum_axis(1)?,
            "mul" => v[0].mul(&v[1])?,
            "mul_scalar_var" => v[0].mul_scalar_var(&v[1])?,
            _ => unreachable!("case table and op table agree"),
        };
        project(out, &weights)
    })
}

/// Result of `trials` randomized checks of one primitive or block.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub trials: usize,
    pub max_rel_err: f64,
    /// Inputs that no trial managed to compare.
    pub uncovered: Vec<String>,
    pub passed: bool,
}

impl SuiteEntry {
    /// Folds per-trial reports: every compared probe must agree and every
    /// input must be compared in at least one trial.
    pub fn aggregate(name: &str, reports: &[GradCheckReport]) -> SuiteEntry {
        let mut worst = 0.0f64;
        let mut passed = !reports.is_empty();
        let mut labels: Vec<String> = Vec::new();
        let mut covered = std::collections::HashSet::new();
        for r in reports {
            worst = worst.max(r.max_rel_err());
            passed &= r.passed();
            for i in &r.inputs {
                if !labels.contains(&i.label) {
                    labels.push(i.label.clone());
                }
                if i.coords > 0 {
                    covered.insert(i.label.clone());
                }
            }
        }
        let uncovered: Vec<String> = labels.into_iter().filter(|l| !covered.contains(l)).collect();
        SuiteEntry {
            name: name.to_string(),
            trials: reports.len(),
            max_rel_err: worst,
            passed: passed && uncovered.is_empty(),
            uncovered,
        }
    }
}

/// Checks every primitive `trials` times.
pub fn primitive_suite(trials: usize, check: &GradCheck) -> Result<Vec<SuiteEntry>> {
    PRIMITIVES
        .iter()
        .map(|&name| {
            let reports = (0..trials)
                .map(|t| check_primitive(name, t as u64, check))
                .collect::<Result<Vec<_>>>()?;
            Ok(SuiteEntry::aggregate(name, &reports))
        })
        .collect()
}
