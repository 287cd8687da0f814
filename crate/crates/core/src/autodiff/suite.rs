//! The primitive gradient-check table shared by tests and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{grad_check, Graph, Tensor, Var};
use crate::error::Result;

/// Worst relative error of one check over all its random points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("shape matches data")
}

/// Reduces `y` to a scalar through fixed random weights so that every output
/// element contributes a distinct gradient.
fn weighted_sum(g: &mut Graph<'_>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(y), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type Build = fn(&mut Graph<'_>, &[Var]) -> Result<Var>;

struct Case {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    range: (f64, f64),
    f: Build,
}

const CASES: &[Case] = &[
    Case {
        name: "matmul",
        shapes: &[&[3, 4], &[4, 2]],
        range: (-1.0, 1.0),
        f: |g, v| g.matmul(v[0], v[1]),
    },
    Case {
        name: "add",
        shapes: &[&[3, 4], &[4]],
        range: (-1.0, 1.0),
        f: |g, v| g.add(v[0], v[1]),
    },
    Case {
        name: "sub",
        shapes: &[&[2, 3], &[2, 3]],
        range: (-1.0, 1.0),
        f: |g, v| g.sub(v[0], v[1]),
    },
    Case {
        name: "mul",
        shapes: &[&[3, 4], &[4]],
        range: (-1.0, 1.0),
        f: |g, v| g.mul(v[0], v[1]),
    },
    Case {
        name: "scale",
        shapes: &[&[5]],
        range: (-1.0, 1.0),
        f: |g, v| Ok(g.scale(v[0], -2.5)),
    },
    Case {
        name: "transpose",
        shapes: &[&[3, 2]],
        range: (-1.0, 1.0),
        f: |g, v| g.transpose(v[0]),
    },
    Case {
        name: "reshape",
        shapes: &[&[3, 4]],
        range: (-1.0, 1.0),
        f: |g, v| g.reshape(v[0], &[2, 6]),
    },
    Case {
        name: "slice",
        shapes: &[&[3, 5]],
        range: (-1.0, 1.0),
        f: |g, v| g.slice(v[0], 1, 1, 4),
    },
    Case {
        name: "slice0",
        shapes: &[&[4, 2, 3]],
        range: (-1.0, 1.0),
        f: |g, v| g.slice(v[0], 1, 1, 2),
    },
    Case {
        name: "concat",
        shapes: &[&[2, 3], &[2, 2]],
        range: (-1.0, 1.0),
        f: |g, v| g.concat(&[v[0], v[1]], 1),
    },
    Case {
        name: "concat0",
        shapes: &[&[2, 3], &[1, 3]],
        range: (-1.0, 1.0),
        f: |g, v| g.concat(&[v[0], v[1]], 0),
    },
    Case {
        name: "softmax",
        shapes: &[&[3, 4]],
        range: (-2.0, 2.0),
        f: |g, v| Ok(g.softmax(v[0], 0.7)),
    },
    Case {
        name: "log_softmax",
        shapes: &[&[2, 5]],
        range: (-2.0, 2.0),
        f: |g, v| Ok(g.log_softmax(v[0], 0.3)),
    },
    Case {
        name: "layer_norm",
        shapes: &[&[3, 6], &[6], &[6]],
        range: (-2.0, 2.0),
        f: |g, v| g.layer_norm(v[0], Some(v[1]), Some(v[2]), 1e-5),
    },
    Case {
        name: "layer_norm_plain",
        shapes: &[&[2, 5]],
        range: (-2.0, 2.0),
        f: |g, v| g.layer_norm(v[0], None, None, 1e-5),
    },
    Case {
        name: "gelu",
        shapes: &[&[7]],
        range: (-2.0, 2.0),
        f: |g, v| Ok(g.gelu(v[0])),
    },
    Case {
        name: "exp",
        shapes: &[&[4]],
        range: (-2.0, 2.0),
        f: |g, v| Ok(g.exp(v[0])),
    },
    Case {
        name: "log",
        shapes: &[&[4]],
        range: (0.5, 3.0),
        f: |g, v| Ok(g.log(v[0])),
    },
    Case {
        name: "tanh",
        shapes: &[&[4]],
        range: (-2.0, 2.0),
        f: |g, v| Ok(g.tanh(v[0])),
    },
    Case {
        name: "softplus",
        shapes: &[&[6]],
        range: (-3.0, 3.0),
        f: |g, v| Ok(g.softplus(v[0])),
    },
    Case {
        name: "mse",
        shapes: &[&[3, 2], &[3, 2]],
        range: (-1.0, 1.0),
        f: |g, v| g.mse(v[0], v[1]),
    },
    Case {
        name: "masked_mse",
        shapes: &[&[6], &[6]],
        range: (-1.0, 1.0),
        f: |g, v| g.masked_mse(v[0], v[1], &[true, false, true, true, false, true]),
    },
    Case {
        name: "cross_entropy",
        shapes: &[&[2, 4], &[2, 4]],
        range: (-2.0, 2.0),
        f: |g, v| {
            let t = g.softmax(v[0], 1.0);
            let l = g.log_softmax(v[1], 1.0);
            g.cross_entropy(t, l)
        },
    },
    Case {
        name: "masked_fill",
        shapes: &[&[5]],
        range: (-1.0, 1.0),
        f: |g, v| g.masked_fill(v[0], &[false, true, false, false, true], 3.0),
    },
    Case {
        name: "mean_rows",
        shapes: &[&[4, 3]],
        range: (-1.0, 1.0),
        f: |g, v| g.mean_rows(v[0]),
    },
    Case {
        name: "sum",
        shapes: &[&[2, 3]],
        range: (-1.0, 1.0),
        f: |g, v| Ok(g.sum(v[0])),
    },
    Case {
        name: "windowed_attention",
        shapes: &[&[6, 3], &[6, 3], &[6, 2]],
        range: (-1.0, 1.0),
        f: |g, v| g.windowed_attention(v[0], v[1], v[2], 1, 0.8),
    },
    Case {
        name: "windowed_attention_full",
        shapes: &[&[5, 2], &[5, 2], &[5, 3]],
        range: (-1.0, 1.0),
        f: |g, v| g.windowed_attention(v[0], v[1], v[2], 100, 1.1),
    },
];

/// Grad-checks every differentiable primitive at `points` random inputs
/// each (central differences, h = 1e-5). Non-scalar outputs are reduced
/// through a random weighting.
pub fn primitive_checks(points: usize) -> Result<Vec<CheckResult>> {
    CASES
        .iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(c.name.len() as u64 * 7919);
            let mut worst = 0.0f64;
            for point in 0..points as u64 {
                let inputs: Vec<Tensor> = c
                    .shapes
                    .iter()
                    .map(|s| rand_tensor(&mut rng, s, c.range.0, c.range.1))
                    .collect();
                let err = grad_check(&inputs, 1e-5, |g, v| {
                    let y = (c.f)(g, v)?;
                    if g.value(y).numel() == 1 {
                        Ok(y)
                    } else {
                        weighted_sum(g, y, point)
                    }
                })?;
                worst = worst.max(err);
            }
            Ok(CheckResult {
                name: c.name.to_string(),
                max_rel_error: worst,
            })
        })
        .collect()
}
