//! The multitask network: a residual encoder feeding a softmax classifier
//! and a transposed-convolution decoder that rebuilds the input patch.

mod train;
mod weights;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{BnMode, BnState, Padding, Parameter, Tape, Tensor, Var};
use crate::PATCH_SIZE;

pub use train::{train, EpochRecord, TrainConfig, TrainReport, EARLY_STOP_MIN_DELTA};
pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_VERSION};

/// Width of the encoder and of the pooled latent vector.
pub const LATENT: usize = 64;
/// Output channels of the decoder layers before the final one.
pub const DECODER_WIDTHS: [usize; 4] = [128, 96, 64, 48];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_c: f32,
    pub lambda_r: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_c: 0.5,
            lambda_r: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_c: f32, lambda_r: f32) -> Result<Self> {
        let ok = |v: f32| v.is_finite() && v >= 0.0;
        if !ok(lambda_c) || !ok(lambda_r) || lambda_c + lambda_r <= 0.0 {
            return Err(Error::invalid(format!(
                "loss weights must be non-negative with a positive sum, got {lambda_c}/{lambda_r}"
            )));
        }
        Ok(LossWeights { lambda_c, lambda_r })
    }
}

/// Outputs of one forward pass over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    /// `[N, C]` class probabilities.
    pub probs: Tensor,
    /// `[N, 9, 9, B]` reconstructions.
    pub recon: Tensor,
    /// `[N, 64]` pooled features.
    pub latent: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mdl4owNet {
    bands: usize,
    num_classes: usize,
    seed: u64,
    names: Vec<String>,
    params: Vec<Parameter>,
    bn_names: Vec<String>,
    bn: Vec<BnState>,
}

struct Vars {
    probs: Var,
    recon: Var,
    latent: Var,
}

/// Walks parameters and BN states in construction order.
struct Cursor {
    p: usize,
    bn: usize,
}

impl Cursor {
    fn param(&mut self, tape: &mut Tape, params: &[Parameter]) -> Var {
        let v = tape.param(self.p, &params[self.p]);
        self.p += 1;
        v
    }

    fn conv(
        &mut self,
        tape: &mut Tape,
        params: &[Parameter],
        x: Var,
        transpose: bool,
    ) -> Result<Var> {
        let k = self.param(tape, params);
        let b = self.param(tape, params);
        if transpose {
            tape.conv2d_transpose(x, k, b)
        } else {
            tape.conv2d(x, k, b, Padding::Same)
        }
    }

    fn bn(
        &mut self,
        tape: &mut Tape,
        params: &[Parameter],
        states: &mut [BnState],
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let gamma = self.param(tape, params);
        let beta = self.param(tape, params);
        let v = tape.batch_norm(x, gamma, beta, &mut states[self.bn], mode)?;
        self.bn += 1;
        Ok(v)
    }
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

struct Builder {
    rng: ChaCha8Rng,
    names: Vec<String>,
    params: Vec<Parameter>,
    bn_names: Vec<String>,
    bn: Vec<BnState>,
}

impl Builder {
    fn push(&mut self, name: String, value: Tensor) {
        self.names.push(name);
        self.params.push(Parameter::new(value));
    }

    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize) {
        let kernel = glorot(&[k, k, cin, cout], k * k * cin, k * k * cout, &mut self.rng);
        self.push(format!("{name}.kernel"), kernel);
        self.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
    }

    /// Transposed kernels are stored `[k, k, out, in]`.
    fn conv_t(&mut self, name: &str, k: usize, cin: usize, cout: usize) {
        let kernel = glorot(&[k, k, cout, cin], k * k * cin, k * k * cout, &mut self.rng);
        self.push(format!("{name}.kernel"), kernel);
        self.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
    }

    fn bn(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.gamma"), Tensor::full(&[c], 1.0));
        self.push(format!("{name}.beta"), Tensor::zeros(&[c]));
        self.bn_names.push(name.to_owned());
        self.bn.push(BnState::standard(c));
    }
}

/// Builds a freshly initialized network. Weights are Glorot-uniform draws from
/// a ChaCha8 stream seeded with `seed`; biases and BN shifts start at zero.
pub fn build_network(bands: usize, num_classes: usize, seed: u64) -> Result<Mdl4owNet> {
    if bands == 0 {
        return Err(Error::invalid("bands must be positive"));
    }
    if num_classes < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if num_classes >= u16::MAX as usize {
        return Err(Error::invalid("too many classes"));
    }
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        names: Vec::new(),
        params: Vec::new(),
        bn_names: Vec::new(),
        bn: Vec::new(),
    };
    b.conv("stem.conv", 3, bands, LATENT);
    b.bn("stem.bn", LATENT);
    for unit in ["res1", "res2"] {
        b.conv(&format!("{unit}.conv1"), 3, LATENT, LATENT);
        b.bn(&format!("{unit}.bn1"), LATENT);
        b.conv(&format!("{unit}.conv2"), 3, LATENT, LATENT);
        b.bn(&format!("{unit}.bn2"), LATENT);
    }
    let w = glorot(&[LATENT, num_classes], LATENT, num_classes, &mut b.rng);
    b.push("classifier.weight".into(), w);
    b.push("classifier.bias".into(), Tensor::zeros(&[num_classes]));
    let mut cin = LATENT;
    for (i, &cout) in DECODER_WIDTHS.iter().enumerate() {
        let k = if i == 0 { 1 } else { 3 };
        b.conv_t(&format!("dec{}.deconv", i + 1), k, cin, cout);
        b.bn(&format!("dec{}.bn", i + 1), cout);
        cin = cout;
    }
    b.conv_t("dec5.deconv", 3, cin, bands);
    Ok(Mdl4owNet {
        bands,
        num_classes,
        seed,
        names: b.names,
        params: b.params,
        bn_names: b.bn_names,
        bn: b.bn,
    })
}

impl Mdl4owNet {
    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.params[i])
    }

    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn bn_states(&self) -> &[BnState] {
        &self.bn
    }

    pub fn bn_state_mut(&mut self, name: &str) -> Option<&mut BnState> {
        self.bn_names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.bn[i])
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let expect = [PATCH_SIZE, PATCH_SIZE, self.bands];
        match batch.shape() {
            [n, rest @ ..] if *n > 0 && rest == expect => Ok(()),
            other => Err(Error::shape(format!(
                "expected a [N, {PATCH_SIZE}, {PATCH_SIZE}, {}] batch, got {other:?}",
                self.bands
            ))),
        }
    }

    fn record(
        params: &[Parameter],
        states: &mut [BnState],
        tape: &mut Tape,
        x: Var,
        mode: BnMode,
    ) -> Result<Vars> {
        let mut cur = Cursor { p: 0, bn: 0 };
        let h = cur.conv(tape, params, x, false)?;
        let h = cur.bn(tape, params, states, h, mode)?;
        let mut h = tape.relu(h);
        for _ in 0..2 {
            let r = cur.conv(tape, params, h, false)?;
            let r = cur.bn(tape, params, states, r, mode)?;
            let r = tape.relu(r);
            let r = cur.conv(tape, params, r, false)?;
            let r = cur.bn(tape, params, states, r, mode)?;
            let sum = tape.add(r, h)?;
            h = tape.relu(sum);
        }
        let latent = tape.global_avg_pool(h)?;
        let w = cur.param(tape, params);
        let b = cur.param(tape, params);
        let logits = tape.dense(latent, w, b)?;
        let probs = tape.softmax(logits);

        let n = tape.value(latent).shape()[0];
        let mut d = tape.reshape(latent, &[n, 1, 1, LATENT])?;
        for _ in 0..DECODER_WIDTHS.len() {
            d = cur.conv(tape, params, d, true)?;
            d = cur.bn(tape, params, states, d, mode)?;
            d = tape.relu(d);
        }
        let recon = cur.conv(tape, params, d, true)?;
        debug_assert_eq!(cur.p, params.len());
        Ok(Vars {
            probs,
            recon,
            latent,
        })
    }

    /// Forward pass. Train mode normalizes with batch statistics and folds
    /// them into the running estimates; infer mode uses the running
    /// estimates and leaves the network untouched.
    pub fn forward(&mut self, batch: &Tensor, mode: BnMode) -> Result<Forward> {
        match mode {
            BnMode::Infer => self.infer(batch),
            BnMode::Train => {
                self.check_batch(batch)?;
                let mut tape = Tape::inference();
                let x = tape.input(batch.clone());
                let vars = Self::record(&self.params, &mut self.bn, &mut tape, x, mode)?;
                Ok(Self::collect(&mut tape, vars))
            }
        }
    }

    /// Infer-mode forward; pure, so it may run concurrently.
    pub fn infer(&self, batch: &Tensor) -> Result<Forward> {
        self.check_batch(batch)?;
        let mut states = self.bn.clone();
        let mut tape = Tape::inference();
        let x = tape.input(batch.clone());
        let vars = Self::record(&self.params, &mut states, &mut tape, x, BnMode::Infer)?;
        Ok(Self::collect(&mut tape, vars))
    }

    fn collect(tape: &mut Tape, vars: Vars) -> Forward {
        Forward {
            probs: tape.take_value(vars.probs),
            recon: tape.take_value(vars.recon),
            latent: tape.take_value(vars.latent),
        }
    }

    /// Records a train-mode pass and its weighted loss on `tape`.
    /// Returns `(total, classification, reconstruction)` handles.
    pub(crate) fn loss_on_tape(
        &mut self,
        tape: &mut Tape,
        batch: &Tensor,
        onehot: &Tensor,
        weights: LossWeights,
    ) -> Result<(Var, Var, Var)> {
        self.check_batch(batch)?;
        let x = tape.input(batch.clone());
        let vars = Self::record(&self.params, &mut self.bn, tape, x, BnMode::Train)?;
        let ce = tape.cross_entropy(vars.probs, onehot)?;
        let l1 = tape.l1_loss(vars.recon, batch)?;
        let total = tape.weighted_sum(ce, weights.lambda_c, l1, weights.lambda_r)?;
        Ok((total, ce, l1))
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }
}

/// Row-major one-hot `[N, C]` from 1-based labels.
pub fn onehot(labels: &[u16], num_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0f32; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 || l as usize > num_classes {
            return Err(Error::invalid(format!(
                "label {l} outside 1..={num_classes}"
            )));
        }
        data[i * num_classes + l as usize - 1] = 1.0;
    }
    Tensor::new(&[labels.len(), num_classes], data)
}

/// `λc·ℓc + λr·ℓr` with ℓc the mean cross-entropy and ℓr the mean absolute error.
pub fn total_loss(
    probs: &Tensor,
    labels: &[u16],
    patches: &Tensor,
    recon: &Tensor,
    weights: LossWeights,
) -> Result<f64> {
    let c = probs.shape().last().copied().unwrap_or(0);
    let ce = crate::tensor::cross_entropy(probs, &onehot(labels, c)?)?;
    let l1 = crate::tensor::l1_loss(patches, recon)?;
    Ok(weights.lambda_c as f64 * ce as f64 + weights.lambda_r as f64 * l1 as f64)
}

/// 1-based index of the largest entry; ties go to the lowest index.
pub fn argmax_label(row: &[f32]) -> u16 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u16 + 1
}

/// Per-instance mean absolute error between patches and reconstructions.
pub fn instance_l1(patches: &Tensor, recon: &Tensor) -> Result<Vec<f64>> {
    if patches.shape() != recon.shape() || patches.rank() < 2 {
        return Err(Error::shape(format!(
            "patches {:?} vs reconstructions {:?}",
            patches.shape(),
            recon.shape()
        )));
    }
    let per = patches.len() / patches.shape()[0];
    Ok(patches
        .data()
        .chunks_exact(per)
        .zip(recon.data().chunks_exact(per))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(&a, &b)| (a as f64 - b as f64).abs())
                .sum::<f64>()
                / per as f64
        })
        .collect())
}

/// Infer-mode reconstruction loss of every instance in `[N, 9, 9, B]`.
pub fn reconstruction_errors(net: &Mdl4owNet, patches: &Tensor) -> Result<Vec<f64>> {
    let out = net.infer(patches)?;
    instance_l1(patches, &out.recon)
}

/// Infer-mode closed-set labels (1-based) and probabilities.
pub fn predict_closed(net: &Mdl4owNet, patches: &Tensor) -> Result<(Vec<u16>, Tensor)> {
    let out = net.infer(patches)?;
    let labels = out
        .probs
        .data()
        .chunks_exact(net.num_classes)
        .map(argmax_label)
        .collect();
    Ok((labels, out.probs))
}
