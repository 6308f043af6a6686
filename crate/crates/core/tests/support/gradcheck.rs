//! Central finite-difference oracle for tape gradients.
//!
//! The oracle evaluates the forward pass only; it never calls `backward`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmlab_core::numerics::{Tape, Tensor, Var};
use rmlab_core::Result;

pub const FD_STEP: f64 = 1e-6;
pub const MAX_REL_ERR: f64 = 1e-5;

type Sample = fn(&mut ChaCha8Rng) -> Vec<Tensor>;
type Build = fn(&Tape, &[Var]) -> Result<Var>;

pub struct OpCase {
    pub name: &'static str,
    pub sample: Sample,
    /// Must return a scalar.
    pub build: Build,
    /// Inputs that carry integer indices rather than differentiable values.
    pub fixed: &'static [usize],
}

/// `floor` keeps gradients below the difference quotient's own rounding
/// noise from being scored as relative errors.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval(case: &OpCase, inputs: &[Tensor]) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = (case.build)(&tape, &vars).expect("forward");
    tape.value(out).item().expect("scalar output")
}

/// Max relative error between tape gradients and central differences for a
/// single instance.
pub fn check_instance(case: &OpCase, inputs: &[Tensor]) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = (case.build)(&tape, &vars).expect("forward");
    let grads = tape.backward(out).expect("backward");

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        if case.fixed.contains(&i) {
            continue;
        }
        let analytic = grads.get(vars[i]);
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let x = input.data()[j];
            plus[i].data_mut()[j] = x + FD_STEP;
            minus[i].data_mut()[j] = x - FD_STEP;
            let width = plus[i].data()[j] - minus[i].data()[j];
            let (fp, fm) = (eval(case, &plus), eval(case, &minus));
            let numeric = (fp - fm) / width;
            let noise = 8.0 * f64::EPSILON * fp.abs().max(fm.abs()).max(1.0) / width;
            worst = worst.max(rel_err(analytic.data()[j], numeric, noise / MAX_REL_ERR));
        }
    }
    worst
}

/// Runs `instances` seeded draws of `case`, returning the worst error seen.
pub fn check_case(case: &OpCase, instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|_| check_instance(case, &(case.sample)(&mut rng)))
        .fold(0.0, f64::max)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values whose pairwise gaps all exceed `gap`, so a ±h perturbation can never
/// reorder them.
fn separated(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, gap: f64) -> Tensor {
    loop {
        let t = uniform(rng, shape, lo, hi);
        let mut v = t.data().to_vec();
        v.sort_by(f64::total_cmp);
        if v.windows(2).all(|w| w[1] - w[0] > gap) {
            return t;
        }
    }
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..5)
}

/// Positive weights that turn a tensor output into a scalar loss.
fn weights(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, 0.5, 1.5)
}

fn weighted_sum(tape: &Tape, out: Var, w: Var) -> Result<Var> {
    let p = tape.mul(out, w)?;
    tape.sum_all(p)
}

/// Every differentiable tape op, each wrapped into a scalar loss.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            sample: |r| {
                let (m, k, n) = (dim(r), dim(r), dim(r));
                vec![
                    uniform(r, &[m, k], 0.2, 1.5),
                    uniform(r, &[k, n], 0.2, 1.5),
                    weights(r, &[m, n]),
                ]
            },
            build: |t, v| weighted_sum(t, t.matmul(v[0], v[1])?, v[2]),
            fixed: &[],
        },
        OpCase {
            name: "add_bias_broadcast",
            sample: |r| {
                let (m, n) = (dim(r), dim(r));
                vec![
                    uniform(r, &[m, n], -2.0, 2.0),
                    uniform(r, &[n], -2.0, 2.0),
                    weights(r, &[m, n]),
                ]
            },
            build: |t, v| weighted_sum(t, t.add(v[0], v[1])?, v[2]),
            fixed: &[],
        },
        OpCase {
            name: "sub_column_broadcast",
            sample: |r| {
                let (m, n) = (dim(r), dim(r));
                vec![
                    uniform(r, &[m, n], -2.0, 2.0),
                    uniform(r, &[m, 1], -2.0, 2.0),
                    weights(r, &[m, n]),
                ]
            },
            build: |t, v| weighted_sum(t, t.sub(v[0], v[1])?, v[2]),
            fixed: &[],
        },
        OpCase {
            name: "mul_scalar_broadcast",
            sample: |r| {
                let (m, n) = (dim(r), dim(r));
                vec![
                    uniform(r, &[m, n], 0.5, 2.0),
                    uniform(r, &[], 0.5, 2.0),
                    weights(r, &[m, n]),
                ]
            },
            build: |t, v| weighted_sum(t, t.mul(v[0], v[1])?, v[2]),
            fixed: &[],
        },
        OpCase {
            name: "minimum",
            sample: |r| {
                let n = dim(r) + 1;
                let both = separated(r, &[2 * n], -2.0, 2.0, 1e-3);
                let a = Tensor::vector(both.data()[..n].to_vec());
                let b = Tensor::vector(both.data()[n..].to_vec());
                vec![a, b, weights(r, &[n])]
            },
            build: |t, v| weighted_sum(t, t.minimum(v[0], v[1])?, v[2]),
            fixed: &[],
        },
        OpCase {
            name: "scale",
            sample: |r| {
                let n = dim(r);
                vec![uniform(r, &[n], -2.0, 2.0), weights(r, &[n])]
            },
            build: |t, v| weighted_sum(t, t.scale(v[0], -1.7)?, v[1]),
            fixed: &[],
        },
        OpCase {
            name: "tanh",
            sample: |r| {
                let n = dim(r);
                vec![uniform(r, &[n], -2.0, 2.0), weights(r, &[n])]
            },
            build: |t, v| weighted_sum(t, t.tanh(v[0])?, v[1]),
            fixed: &[],
        },
        OpCase {
            name: "sigmoid",
            sample: |r| {
                let n = dim(r);
                vec![uniform(r, &[n], -3.0, 3.0), weights(r, &[n])]
            },
            build: |t, v| weighted_sum(t, t.sigmoid(v[0])?, v[1]),
            fixed: &[],
        },
        OpCase {
            name: "softplus",
            sample: |r| {
                let n = dim(r);
                vec![uniform(r, &[n], -3.0, 3.0), weights(r, &[n])]
            },
            build: |t, v| weighted_sum(t, t.softplus(v[0])?, v[1]),
            fixed: &[],
        },
        OpCase {
            name: "exp",
            sample: |r| {
                let n = dim(r);
                vec![uniform(r, &[n], -2.0, 2.0), weights(r, &[n])]
            },
            build: |t, v| weighted_sum(t, t.exp(v[0])?, v[1]),
            fixed: &[],
        },
        OpCase {
            name: "log",
            sample: |r| {
                let n = dim(r);
                vec![uniform(r, &[n], 0.2, 3.0), weights(r, &[n])]
            },
            build: |t, v| weighted_sum(t, t.log(v[0])?, v[1]),
            fixed: &[],
        },
        OpCase {
            name: "clamp",
            sample: |r| {
                // Keep inputs away from the 0.8 / 1.2 corners.
                let n = dim(r) + 1;
                let mut x = uniform(r, &[n], 0.5, 1.5);
                for v in x.data_mut() {
                    if (*v - 0.8).abs() < 1e-3 || (*v - 1.2).abs() < 1e-3 {
                        *v += 0.01;
                    }
                }
                vec![x, weights(r, &[n])]
            },
            build: |t, v| weighted_sum(t, t.clamp(v[0], 0.8, 1.2)?, v[1]),
            fixed: &[],
        },
        OpCase {
            name: "sum_axis",
            sample: |r| {
                let (a, b, c) = (dim(r), dim(r), dim(r));
                vec![uniform(r, &[a, b, c], -2.0, 2.0), weights(r, &[a, c])]
            },
            build: |t, v| weighted_sum(t, t.sum(v[0], 1)?, v[1]),
            fixed: &[],
        },
        OpCase {
            name: "mean_axis",
            sample: |r| {
                let (a, b) = (dim(r), dim(r));
                vec![uniform(r, &[a, b], -2.0, 2.0), weights(r, &[b])]
            },
            build: |t, v| weighted_sum(t, t.mean(v[0], 0)?, v[1]),
            fixed: &[],
        },
        OpCase {
            name: "mean_all",
            sample: |r| {
                let (a, b) = (dim(r), dim(r));
                vec![uniform(r, &[a, b], 0.5, 2.0)]
            },
            build: |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.mean_all(sq)
            },
            fixed: &[],
        },
        OpCase {
            name: "logsumexp",
            sample: |r| {
                let (a, b) = (dim(r), dim(r) + 1);
                vec![uniform(r, &[a, b], -2.0, 2.0), weights(r, &[a])]
            },
            build: |t, v| weighted_sum(t, t.logsumexp(v[0], 1)?, v[1]),
            fixed: &[],
        },
        OpCase {
            name: "log_softmax",
            sample: |r| {
                let (a, b) = (dim(r), dim(r) + 1);
                let targets: Vec<f64> = (0..a).map(|_| r.random_range(0..b) as f64).collect();
                vec![uniform(r, &[a, b], -2.0, 2.0), Tensor::vector(targets)]
            },
            // Negative log-likelihood of integer targets, as used in training.
            build: |t, v| {
                let idx: Vec<usize> = t.value(v[1]).data().iter().map(|&x| x as usize).collect();
                let lp = t.log_softmax(v[0])?;
                let picked = t.pick(lp, &idx)?;
                let s = t.sum_all(picked)?;
                t.neg(s)
            },
            fixed: &[1],
        },
        OpCase {
            name: "min_over_axis",
            sample: |r| {
                let (a, b) = (dim(r) + 1, dim(r));
                vec![separated(r, &[a, b], -2.0, 2.0, 1e-3), weights(r, &[b])]
            },
            build: |t, v| weighted_sum(t, t.min_over_axis(v[0], 0)?.0, v[1]),
            fixed: &[],
        },
        OpCase {
            name: "reshape_rows",
            sample: |r| {
                let (a, b) = (dim(r) + 1, dim(r));
                vec![uniform(r, &[a * b], -2.0, 2.0), weights(r, &[a - 1, b])]
            },
            build: |t, v| {
                let n = t.shape(v[1]);
                let m = t.reshape(v[0], &[n[0] + 1, n[1]])?;
                weighted_sum(t, t.rows(m, 1, n[0] + 1)?, v[1])
            },
            fixed: &[],
        },
        OpCase {
            name: "embedding_bag",
            sample: |r| {
                let (vocab, width) = (dim(r) + 1, dim(r));
                let bags = dim(r);
                let mut toks = Vec::new();
                for _ in 0..bags {
                    let len = dim(r);
                    toks.push(len as f64);
                    for _ in 0..len {
                        toks.push(r.random_range(0..vocab) as f64);
                    }
                }
                vec![
                    uniform(r, &[vocab, width], -1.0, 1.0),
                    Tensor::vector(toks),
                    weights(r, &[bags, width]),
                ]
            },
            build: |t, v| {
                let flat = t.value(v[1]);
                let mut bags = Vec::new();
                let mut it = flat.data().iter().map(|&x| x as usize);
                while let Some(len) = it.next() {
                    bags.push(it.by_ref().take(len).collect::<Vec<_>>());
                }
                weighted_sum(t, t.embedding_bag(v[0], &bags)?, v[2])
            },
            fixed: &[1],
        },
        OpCase {
            name: "two_layer_tanh_network",
            sample: |r| {
                let (n, i, h) = (dim(r), dim(r) + 1, dim(r) + 2);
                vec![
                    uniform(r, &[n, i], -1.0, 1.0),
                    uniform(r, &[i, h], -1.0, 1.0),
                    uniform(r, &[h], -0.5, 0.5),
                    uniform(r, &[h, 1], -1.0, 1.0),
                ]
            },
            build: |t, v| {
                let z = t.matmul(v[0], v[1])?;
                let z = t.add(z, v[2])?;
                let a = t.tanh(z)?;
                let o = t.matmul(a, v[3])?;
                let o = t.tanh(o)?;
                let sq = t.mul(o, o)?;
                t.sum_all(sq)
            },
            fixed: &[],
        },
    ]
}
