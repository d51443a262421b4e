//! Central finite-difference checks of the tape's analytic gradients.
//!
//! Graphs are evaluated at `f64`. Non-scalar outputs are reduced to a scalar
//! with fixed random weights, so every output element contributes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Result, Tape, Var};

/// Perturbation used for the central differences.
pub const EPS: f64 = 1e-3;

/// A named input of a checked graph.
#[derive(Debug, Clone)]
pub struct Input {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Input {
    pub fn new(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            shape,
            data,
        }
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`; 0 when both are essentially zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

fn evaluate(inputs: &[Input], build: &Build<'_>, weights_seed: u64) -> Result<(Tape<f64>, Var)> {
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|i| tape.param_raw(&i.name, i.shape.clone(), i.data.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let out = build(&mut tape, &vars)?;
    if tape.value(out).len() == 1 {
        return Ok((tape, out));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
    let shape = tape.shape(out).to_vec();
    let w = (0..tape.value(out).len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let w = tape.constant(shape, w)?;
    let prod = tape.mul(out, w)?;
    let loss = tape.sum(prod);
    Ok((tape, loss))
}

/// Largest relative error over all inputs between backward-pass gradients
/// and central differences.
pub fn check(inputs: &[Input], build: &Build<'_>, weights_seed: u64) -> Result<f64> {
    let (tape, loss) = evaluate(inputs, build, weights_seed)?;
    let grads = tape.backward(loss)?;
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(&input.name)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.data.len()]);
        let mut numeric = vec![0.0; input.data.len()];
        for (j, num) in numeric.iter_mut().enumerate() {
            let probe = |delta: f64| -> Result<f64> {
                let mut shifted = inputs.to_vec();
                shifted[k].data[j] += delta;
                let (t, l) = evaluate(&shifted, build, weights_seed)?;
                Ok(t.value(l)[0])
            };
            *num = (probe(EPS)? - probe(-EPS)?) / (2.0 * EPS);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Outcome of one primitive at one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub primitive: &'static str,
    pub seed: u64,
    pub rel_error: f64,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Uniform values kept at least `gap` away from zero, for kinked primitives.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Distinct values spaced 0.05 apart in random order, so no perturbation can
/// change a max.
fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    spread(rng, n, 0.05)
}

/// `n` values `step` apart, centred on zero, in random order.
fn spread(rng: &mut ChaCha8Rng, n: usize, step: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * step).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    v
}

fn inp(name: &str, shape: &[usize], data: Vec<f64>) -> Input {
    Input::new(name, shape.to_vec(), data)
}

fn n(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Every primitive, each as a small graph with random inputs for `seed`.
pub fn primitive_cases(seed: u64) -> Vec<(&'static str, Vec<Input>, Box<Build<'static>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(&'static str, Vec<Input>, Box<Build<'static>>)> = Vec::new();
    macro_rules! case {
        ($name:expr, $inputs:expr, $f:expr) => {
            cases.push(($name, $inputs, Box::new($f)))
        };
    }

    case!(
        "matmul",
        vec![
            inp("a", &[2, 3, 4], uniform(&mut rng, 24)),
            inp("b", &[4, 5], uniform(&mut rng, 20)),
        ],
        |t, v| t.matmul(v[0], v[1])
    );
    case!(
        "add",
        vec![
            inp("a", &[3, 4], uniform(&mut rng, 12)),
            inp("b", &[3, 4], uniform(&mut rng, 12)),
        ],
        |t, v| t.add(v[0], v[1])
    );
    case!(
        "add_broadcast",
        vec![
            inp("a", &[2, 3, 4], uniform(&mut rng, 24)),
            inp("b", &[4], uniform(&mut rng, 4)),
        ],
        |t, v| t.add(v[0], v[1])
    );
    case!(
        "mul_broadcast",
        vec![
            inp("a", &[3, 4], uniform(&mut rng, 12)),
            inp("b", &[4], uniform(&mut rng, 4)),
        ],
        |t, v| t.mul(v[0], v[1])
    );
    case!(
        "scale",
        vec![inp("a", &[5], uniform(&mut rng, 5))],
        |t, v| Ok(t.scale(v[0], -1.7))
    );
    case!(
        "relu",
        vec![inp("a", &[3, 5], away_from_zero(&mut rng, 15, 0.05))],
        |t, v| Ok(t.relu(v[0]))
    );
    let axis = rng.random_range(0..3);
    case!(
        "softmax",
        vec![inp("a", &[2, 3, 4], uniform(&mut rng, 24))],
        move |t, v| t.softmax(v[0], axis)
    );
    // Normalizing nearly equal values is too curved for a 1e-3 step, so the
    // inputs are spread out.
    let axis = rng.random_range(0..3);
    let s = [2, 3, 4];
    case!(
        "layer_norm",
        vec![
            inp("x", &s, spread(&mut rng, 24, 0.15)),
            inp("g", &[s[axis]], uniform(&mut rng, s[axis])),
            inp("b", &[s[axis]], uniform(&mut rng, s[axis])),
        ],
        move |t, v| t.layer_norm(v[0], axis, Some(v[1]), Some(v[2]))
    );
    let ids: Vec<usize> = (0..6).map(|_| rng.random_range(0..5)).collect();
    case!(
        "embedding",
        vec![inp("table", &[5, 3], uniform(&mut rng, 15))],
        move |t, v| t.embedding(v[0], &ids, &[2, 3])
    );
    let drop_seed = rng.random();
    case!(
        "dropout",
        vec![inp("a", &[4, 5], uniform(&mut rng, 20))],
        move |t, v| {
            let mut r = ChaCha8Rng::seed_from_u64(drop_seed);
            t.dropout(v[0], 0.3, true, &mut r)
        }
    );
    let (stride, pad) = [(1, 1), (2, 1), (1, 0)][rng.random_range(0..3)];
    case!(
        "conv2d",
        vec![
            inp("x", &[2, 2, 5, 5], uniform(&mut rng, 100)),
            inp("w", &[3, 2, 3, 3], uniform(&mut rng, 54)),
            inp("b", &[3], uniform(&mut rng, 3)),
        ],
        move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad)
    );
    case!(
        "maxpool2x2",
        vec![inp("a", &[1, 2, 4, 5], distinct(&mut rng, 40))],
        |t, v| t.maxpool2x2(v[0])
    );
    case!(
        "global_avg_pool",
        vec![inp("a", &[2, 3, 2, 3], uniform(&mut rng, 36))],
        |t, v| t.global_avg_pool(v[0])
    );
    case!(
        "reshape",
        vec![inp("a", &[2, 6], uniform(&mut rng, 12))],
        |t, v| t.reshape(v[0], vec![3, 4])
    );
    case!(
        "sum",
        vec![inp("a", &[7], uniform(&mut rng, 7))],
        |t, v| Ok(t.sum(v[0]))
    );
    case!(
        "mean",
        vec![inp("a", &[2, 4], uniform(&mut rng, 8))],
        |t, v| Ok(t.mean(v[0]))
    );
    let (b, tq, tk, d) = (2, 3, 4, 8);
    let mut mask: Vec<bool> = (0..b * tq * tk).map(|_| rng.random_bool(0.7)).collect();
    // One fully masked query row, every other row with at least one key.
    for row in 0..b * tq {
        let r = &mut mask[row * tk..(row + 1) * tk];
        if row == 1 {
            r.fill(false);
        } else if !r.iter().any(|&m| m) {
            r[0] = true;
        }
    }
    case!(
        "attention",
        vec![
            inp("q", &[b, tq, d], uniform(&mut rng, b * tq * d)),
            inp("k", &[b, tk, d], uniform(&mut rng, b * tk * d)),
            inp("v", &[b, tk, d], uniform(&mut rng, b * tk * d)),
        ],
        move |t, v| t.attention(v[0], v[1], v[2], 2, Some(&mask))
    );
    let targets: Vec<Option<usize>> = (0..4)
        .map(|i| (i != 2).then(|| rng.random_range(0..5)))
        .collect();
    case!(
        "cross_entropy",
        vec![inp("logits", &[4, 5], uniform(&mut rng, 20))],
        move |t, v| t.cross_entropy(v[0], &targets)
    );
    // Fan-out: `x` feeds three consumers.
    case!(
        "composite",
        vec![
            inp("x", &[2, 3], away_from_zero(&mut rng, 6, 0.05)),
            inp("w", &[3, 3], uniform(&mut rng, 9)),
        ],
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.add(h, v[0])?;
            let sq = t.mul(v[0], v[0])?;
            let h = t.add(h, sq)?;
            let offset = t.constant(vec![3], vec![0.0, 1.5, 3.0])?;
            let h = t.add(h, offset)?;
            let h = t.layer_norm(h, 1, None, None)?;
            t.softmax(h, 1)
        }
    );
    debug_assert!(cases
        .iter()
        .all(|(_, ins, _)| ins.iter().all(|i| n(&i.shape) == i.data.len())));
    cases
}

/// Run every primitive case for every seed in `seeds`.
pub fn primitive_suite(seeds: impl IntoIterator<Item = u64>) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for seed in seeds {
        for (primitive, inputs, build) in primitive_cases(seed) {
            let rel_error = check(&inputs, build.as_ref(), seed ^ 0x5eed)?;
            out.push(CaseResult {
                primitive,
                seed,
                rel_error,
            });
        }
    }
    Ok(out)
}
