//! Finite-difference gradient checks for tiny multitask networks.
//!
//! The reference forward pass below is a plain f64 loop implementation that
//! shares no code with the library. Networks mirror the real architecture at
//! toy scale: conv + BN + ReLU stem, one residual unit, pooling, a softmax
//! head, and a transposed-convolution decoder back to the patch size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use owhsi::tensor::{BnMode, BnState, Padding, Parameter, Tape, Tensor};

const FD_STEP: f64 = 1e-3;
/// Denominator floor for relative errors of near-zero gradients.
const REL_FLOOR: f64 = 1e-4;
const BN_EPS: f64 = 1e-5;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct TinyNet {
    pub n: usize,
    /// Patch side: 3 or 5.
    pub size: usize,
    pub bands: usize,
    pub width: usize,
    pub classes: usize,
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub input: Vec<f64>,
    pub labels: Vec<usize>,
    /// (name, shape, values) in recording order.
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

/// Sign pattern of every kink (ReLU input, L1 residual) met in a pass.
type Kinks = Vec<bool>;

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

impl TinyNet {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..=6);
        let size = if rng.random_bool(0.5) { 3 } else { 5 };
        let bands = rng.random_range(1..=3);
        let width = rng.random_range(2..=4);
        let classes = rng.random_range(2..=3);
        let mut params = Vec::new();
        let mut push = |name: &str, shape: Vec<usize>, vals: Vec<f64>| {
            // values are what the f32 network sees
            let vals = vals.into_iter().map(|v| v as f32 as f64).collect();
            params.push((name.to_owned(), shape, vals));
        };
        let conv =
            |rng: &mut ChaCha8Rng, k: usize, a: usize, b: usize| uniform(rng, k * k * a * b, 0.8);
        push(
            "stem.k",
            vec![3, 3, bands, width],
            conv(&mut rng, 3, bands, width),
        );
        push("stem.b", vec![width], uniform(&mut rng, width, 0.3));
        for name in ["stem", "r1", "r2"] {
            if name != "stem" {
                push(
                    &format!("{name}.k"),
                    vec![3, 3, width, width],
                    conv(&mut rng, 3, width, width),
                );
                push(
                    &format!("{name}.b"),
                    vec![width],
                    uniform(&mut rng, width, 0.3),
                );
            }
            let gamma = (0..width).map(|_| rng.random_range(0.5..1.5)).collect();
            push(&format!("{name}.gamma"), vec![width], gamma);
            push(
                &format!("{name}.beta"),
                vec![width],
                uniform(&mut rng, width, 0.5),
            );
        }
        push(
            "fc.w",
            vec![width, classes],
            uniform(&mut rng, width * classes, 1.0),
        );
        push("fc.b", vec![classes], uniform(&mut rng, classes, 0.3));
        // decoder: k=1 then (size-1)/2 layers of k=3
        let mut cin = width;
        let steps = (size - 1) / 2;
        let widths: Vec<usize> = (0..=steps)
            .map(|i| {
                if i == steps {
                    bands
                } else {
                    rng.random_range(2..=3)
                }
            })
            .collect();
        for (i, &cout) in widths.iter().enumerate() {
            let k = if i == 0 { 1 } else { 3 };
            push(
                &format!("d{i}.k"),
                vec![k, k, cout, cin],
                conv(&mut rng, k, cout, cin),
            );
            push(&format!("d{i}.b"), vec![cout], uniform(&mut rng, cout, 0.3));
            if i < steps {
                let gamma = (0..cout).map(|_| rng.random_range(0.5..1.5)).collect();
                push(&format!("d{i}.gamma"), vec![cout], gamma);
                push(
                    &format!("d{i}.beta"),
                    vec![cout],
                    uniform(&mut rng, cout, 0.5),
                );
            }
            cin = cout;
        }
        let input = (0..n * size * size * bands)
            .map(|_| rng.random_range(0.0..1.0f32) as f64)
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        TinyNet {
            n,
            size,
            bands,
            width,
            classes,
            lambda_c: rng.random_range(0.2..1.0f32) as f64,
            lambda_r: rng.random_range(0.2..1.0f32) as f64,
            input,
            labels,
            params,
        }
    }

    fn decoder_layers(&self) -> usize {
        (self.size - 1) / 2 + 1
    }

    /// Reference loss plus the kink signs met on the way.
    pub fn reference_loss(&self, params: &[Vec<f64>]) -> (f64, Kinks) {
        let mut kinks = Vec::new();
        let mut p = params.iter();
        let mut next = || p.next().expect("parameter").as_slice();
        let (n, s) = (self.n, self.size);

        let stem = conv_same(&self.input, n, s, self.bands, next(), next(), self.width);
        let stem = batch_norm(&stem, self.width, next(), next());
        let mut h = relu(&stem, &mut kinks);
        let r = conv_same(&h, n, s, self.width, next(), next(), self.width);
        let r = batch_norm(&r, self.width, next(), next());
        let r = relu(&r, &mut kinks);
        let r = conv_same(&r, n, s, self.width, next(), next(), self.width);
        let r = batch_norm(&r, self.width, next(), next());
        let sum: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a + b).collect();
        h = relu(&sum, &mut kinks);

        let pooled = pool(&h, n, s * s, self.width);
        let w = next();
        let b = next();
        let mut ce = 0.0;
        for i in 0..n {
            let logits: Vec<f64> = (0..self.classes)
                .map(|c| {
                    b[c] + (0..self.width)
                        .map(|j| pooled[i * self.width + j] * w[j * self.classes + c])
                        .sum::<f64>()
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let prob = (logits[self.labels[i]] - max).exp() / z;
            ce -= prob.max(PROB_FLOOR).ln();
        }
        ce /= n as f64;

        let mut d = pooled;
        let mut side = 1;
        let mut cin = self.width;
        let layers = self.decoder_layers();
        for layer in 0..layers {
            let k_shape = &self.params[self.param_index(&format!("d{layer}.k"))].1;
            let (k, cout) = (k_shape[0], k_shape[2]);
            d = conv_transpose(&d, n, side, cin, next(), next(), k, cout);
            side += k - 1;
            cin = cout;
            if layer + 1 < layers {
                d = batch_norm(&d, cout, next(), next());
                d = relu(&d, &mut kinks);
            }
        }
        let mut l1 = 0.0;
        for (a, b) in d.iter().zip(&self.input) {
            kinks.push(a > b);
            l1 += (a - b).abs();
        }
        l1 /= d.len() as f64;
        (self.lambda_c * ce + self.lambda_r * l1, kinks)
    }

    fn param_index(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.0 == name)
            .expect("known parameter")
    }

    /// Gradients from the library tape, in parameter order.
    pub fn tape_gradients(&self) -> Vec<Vec<f64>> {
        let mut params: Vec<Parameter> = self
            .params
            .iter()
            .map(|(_, shape, v)| {
                Parameter::new(Tensor::new(shape, v.iter().map(|&x| x as f32).collect()).unwrap())
            })
            .collect();
        let mut tape = Tape::new();
        let mut idx = 0;
        let mut next = |tape: &mut Tape, params: &[Parameter]| {
            let v = tape.param(idx, &params[idx]);
            idx += 1;
            v
        };
        let s = self.size;
        let x = tape.input(
            Tensor::new(
                &[self.n, s, s, self.bands],
                self.input.iter().map(|&v| v as f32).collect(),
            )
            .unwrap(),
        );
        let mut states: Vec<BnState> = Vec::new();
        let mut bn = |tape: &mut Tape, x, g, b, c: usize| {
            states.push(BnState::standard(c));
            let st = states.last_mut().unwrap();
            tape.batch_norm(x, g, b, st, BnMode::Train).unwrap()
        };
        let (k, b) = (next(&mut tape, &params), next(&mut tape, &params));
        let h = tape.conv2d(x, k, b, Padding::Same).unwrap();
        let (g, be) = (next(&mut tape, &params), next(&mut tape, &params));
        let h = bn(&mut tape, h, g, be, self.width);
        let h = tape.relu(h);
        let (k, b) = (next(&mut tape, &params), next(&mut tape, &params));
        let r = tape.conv2d(h, k, b, Padding::Same).unwrap();
        let (g, be) = (next(&mut tape, &params), next(&mut tape, &params));
        let r = bn(&mut tape, r, g, be, self.width);
        let r = tape.relu(r);
        let (k, b) = (next(&mut tape, &params), next(&mut tape, &params));
        let r = tape.conv2d(r, k, b, Padding::Same).unwrap();
        let (g, be) = (next(&mut tape, &params), next(&mut tape, &params));
        let r = bn(&mut tape, r, g, be, self.width);
        let sum = tape.add(r, h).unwrap();
        let h = tape.relu(sum);
        let pooled = tape.global_avg_pool(h).unwrap();
        let (w, b) = (next(&mut tape, &params), next(&mut tape, &params));
        let logits = tape.dense(pooled, w, b).unwrap();
        let probs = tape.softmax(logits);
        let mut onehot = vec![0.0f32; self.n * self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            onehot[i * self.classes + l] = 1.0;
        }
        let onehot = Tensor::new(&[self.n, self.classes], onehot).unwrap();
        let ce = tape.cross_entropy(probs, &onehot).unwrap();

        let mut d = tape.reshape(pooled, &[self.n, 1, 1, self.width]).unwrap();
        let layers = self.decoder_layers();
        for layer in 0..layers {
            let (k, b) = (next(&mut tape, &params), next(&mut tape, &params));
            d = tape.conv2d_transpose(d, k, b).unwrap();
            if layer + 1 < layers {
                let c = *tape.value(d).shape().last().unwrap();
                let (g, be) = (next(&mut tape, &params), next(&mut tape, &params));
                d = bn(&mut tape, d, g, be, c);
                d = tape.relu(d);
            }
        }
        let target = tape.value(x).clone();
        let l1 = tape.l1_loss(d, &target).unwrap();
        let total = tape
            .weighted_sum(ce, self.lambda_c as f32, l1, self.lambda_r as f32)
            .unwrap();
        tape.backward(total, &mut params).unwrap();
        params
            .iter()
            .map(|p| p.grad.data().iter().map(|&g| g as f64).collect())
            .collect()
    }
}

fn conv_same(
    x: &[f64],
    n: usize,
    s: usize,
    cin: usize,
    k: &[f64],
    b: &[f64],
    cout: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n * s * s * cout];
    for img in 0..n {
        for y in 0..s {
            for xx in 0..s {
                for co in 0..cout {
                    let mut acc = b[co];
                    for i in 0..3 {
                        for j in 0..3 {
                            let (yy, xs) =
                                (y as isize + i as isize - 1, xx as isize + j as isize - 1);
                            if yy < 0 || xs < 0 || yy >= s as isize || xs >= s as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let v = x[((img * s + yy as usize) * s + xs as usize) * cin + ci];
                                acc += v * k[((i * 3 + j) * cin + ci) * cout + co];
                            }
                        }
                    }
                    out[((img * s + y) * s + xx) * cout + co] = acc;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_transpose(
    x: &[f64],
    n: usize,
    s: usize,
    cin: usize,
    k: &[f64],
    b: &[f64],
    ks: usize,
    cout: usize,
) -> Vec<f64> {
    let so = s + ks - 1;
    let mut out = vec![0.0; n * so * so * cout];
    for img in 0..n {
        for y in 0..so {
            for xx in 0..so {
                for co in 0..cout {
                    out[((img * so + y) * so + xx) * cout + co] = b[co];
                }
            }
        }
        for y in 0..s {
            for xx in 0..s {
                for ci in 0..cin {
                    let v = x[((img * s + y) * s + xx) * cin + ci];
                    for i in 0..ks {
                        for j in 0..ks {
                            for co in 0..cout {
                                out[((img * so + y + i) * so + xx + j) * cout + co] +=
                                    v * k[((i * ks + j) * cout + co) * cin + ci];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn batch_norm(x: &[f64], c: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let count = (x.len() / c) as f64;
    let mut out = x.to_vec();
    for ch in 0..c {
        let mean = x.iter().skip(ch).step_by(c).sum::<f64>() / count;
        let var = x
            .iter()
            .skip(ch)
            .step_by(c)
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / count;
        let inv = 1.0 / (var + BN_EPS).sqrt();
        for v in out.iter_mut().skip(ch).step_by(c) {
            *v = gamma[ch] * (*v - mean) * inv + beta[ch];
        }
    }
    out
}

fn relu(x: &[f64], kinks: &mut Kinks) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            kinks.push(v > 0.0);
            v.max(0.0)
        })
        .collect()
}

fn pool(x: &[f64], n: usize, area: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for img in 0..n {
        for p in 0..area {
            for ch in 0..c {
                out[img * c + ch] += x[(img * area + p) * c + ch];
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= area as f64);
    out
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub nets: usize,
    pub checked: usize,
    pub skipped: usize,
    pub rel_errors: Vec<f64>,
    /// Largest |analytic| over biases that feed a train-mode BN. Their exact
    /// gradient is zero, so a relative error says nothing there.
    pub zero_bias_max: f64,
}

impl GradReport {
    pub fn median(&self) -> f64 {
        let mut v = self.rel_errors.clone();
        v.sort_by(f64::total_cmp);
        v.get(v.len() / 2).copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.rel_errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Compares tape gradients with central differences of the reference, for
/// up to `per_tensor` coordinates of each parameter tensor.
pub fn check_net(net: &TinyNet, per_tensor: usize, report: &mut GradReport) {
    let analytic = net.tape_gradients();
    let base: Vec<Vec<f64>> = net.params.iter().map(|p| p.2.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(net.input.len() as u64);
    let last = format!("d{}.b", net.decoder_layers() - 1);
    for (t, values) in base.iter().enumerate() {
        let name = &net.params[t].0;
        if name.ends_with(".b") && *name != "fc.b" && *name != last {
            let worst = analytic[t].iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            report.zero_bias_max = report.zero_bias_max.max(worst);
            continue;
        }
        let coords: Vec<usize> = if values.len() <= per_tensor {
            (0..values.len()).collect()
        } else {
            (0..per_tensor)
                .map(|_| rng.random_range(0..values.len()))
                .collect()
        };
        for i in coords {
            let mut plus = base.clone();
            plus[t][i] += FD_STEP;
            let mut minus = base.clone();
            minus[t][i] -= FD_STEP;
            let (lp, kp) = net.reference_loss(&plus);
            let (lm, km) = net.reference_loss(&minus);
            if kp != km {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let a = analytic[t][i];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.rel_errors.push((a - numeric).abs() / denom);
            report.checked += 1;
        }
    }
    report.nets += 1;
}

pub fn check_random_nets(count: usize, seed: u64) -> GradReport {
    let mut report = GradReport::default();
    for i in 0..count {
        check_net(&TinyNet::random(seed + i as u64), 40, &mut report);
    }
    report
}
