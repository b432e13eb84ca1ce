//! Encoder, projection head, classifier, frozen anchor and the variational
//! generative transformer.
//!
//! Parameters live in plain structs as [`Tensor`]s. To run a forward pass a
//! module is *bound* onto a [`Tape`] through a [`Binder`], which registers
//! every parameter as a trainable or frozen leaf in the same order as
//! [`Parameters::params`]. Gradients then come back in that order via
//! [`Binder::gradients`].

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::losses::erm_loss;
use crate::optim::Adam;
use crate::rng::{self, Rng};
use crate::synthdata::{make_batches, Dataset};
use crate::tensor::Tensor;

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

pub trait Parameters {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

/// Registers parameters on a tape and remembers the resulting leaves.
pub struct Binder<'t> {
    tape: &'t Tape,
    trainable: bool,
    vars: Vec<Var<'t>>,
}

impl<'t> Binder<'t> {
    pub fn trainable(tape: &'t Tape) -> Self {
        Self {
            tape,
            trainable: true,
            vars: Vec::new(),
        }
    }

    pub fn frozen(tape: &'t Tape) -> Self {
        Self {
            tape,
            trainable: false,
            vars: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn bind(&mut self, t: &Tensor) -> Var<'t> {
        let v = if self.trainable {
            self.tape.param(t)
        } else {
            self.tape.constant(t)
        };
        self.vars.push(v);
        v
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Gradients for every bound parameter, zero where none reached it.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(&v.shape()))
            })
            .collect()
    }
}

/// Affine map `x W + b` with `W: in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform initialisation in `±1/sqrt(input)`.
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        let k = 1.0 / (input as f64).sqrt();
        let dist = Uniform::new(-k, k);
        let w = (0..input * output).map(|_| dist.sample(rng)).collect();
        let b = (0..output).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Tensor::matrix(input, output, w).expect("positive dims"),
            bias: Tensor::matrix(1, output, b).expect("positive dims"),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weight: Tensor::identity(n),
            bias: Tensor::zeros(&[1, n]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[1, output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t>) -> BoundLinear<'t> {
        BoundLinear {
            weight: b.bind(&self.weight),
            bias: b.bind(&self.bias),
        }
    }
}

impl Parameters for Linear {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy)]
pub struct BoundLinear<'t> {
    weight: Var<'t>,
    bias: Var<'t>,
}

impl<'t> BoundLinear<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(self.weight)?.add(self.bias)
    }
}

/// Multi-layer perceptron with rectifiers between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<Linear>,
}

impl Encoder {
    pub fn new(input: usize, widths: &[usize], rng: &mut Rng) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input;
        for &w in widths {
            layers.push(Linear::new(prev, w, rng));
            prev = w;
        }
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty encoder").output_dim()
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t>) -> BoundEncoder<'t> {
        BoundEncoder {
            input_dim: self.input_dim(),
            layers: self.layers.iter().map(|l| l.bind(b)).collect(),
        }
    }
}

impl Parameters for Encoder {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

pub struct BoundEncoder<'t> {
    input_dim: usize,
    layers: Vec<BoundLinear<'t>>,
}

impl<'t> BoundEncoder<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let width = x.with_value(Tensor::cols);
        if width != self.input_dim {
            return Err(Error::WidthMismatch {
                expected: self.input_dim,
                actual: width,
            });
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(h)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

/// Per-feature standardisation with running statistics for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStandardize {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Statistics observed on one training batch.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchStandardize {
    pub fn new(width: usize) -> Self {
        Self {
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    pub fn update(&mut self, stats: &BatchStats) {
        for (r, m) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

/// Two affine layers with a rectifier between them and unit-norm output.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub first: Linear,
    pub norm: Option<BatchStandardize>,
    pub second: Linear,
}

impl ProjectionHead {
    pub fn new(input: usize, hidden: usize, output: usize, batch_norm: bool, rng: &mut Rng) -> Self {
        Self {
            first: Linear::new(input, hidden, rng),
            norm: batch_norm.then(|| BatchStandardize::new(hidden)),
            second: Linear::new(hidden, output, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.second.output_dim()
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t>) -> BoundHead<'t> {
        let first = self.first.bind(b);
        let second = self.second.bind(b);
        let running = self.norm.as_ref().map(|n| {
            let w = n.running_mean.len();
            let tape = b.tape();
            (
                tape.constant(&Tensor::matrix(1, w, n.running_mean.clone()).expect("width > 0")),
                tape.constant(
                    &Tensor::matrix(1, w, n.running_var.iter().map(|v| (v + BN_EPS).sqrt()).collect())
                        .expect("width > 0"),
                ),
            )
        });
        BoundHead {
            first,
            second,
            running,
        }
    }
}

impl Parameters for ProjectionHead {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.first.params();
        p.extend(self.second.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.first.params_mut();
        p.extend(self.second.params_mut());
        p
    }
}

pub struct BoundHead<'t> {
    first: BoundLinear<'t>,
    second: BoundLinear<'t>,
    /// running mean and running standard deviation
    running: Option<(Var<'t>, Var<'t>)>,
}

impl<'t> BoundHead<'t> {
    /// Unit-norm projection. In training mode the standardisation uses the
    /// batch statistics, which are returned so the caller can fold them into
    /// the running estimates.
    pub fn forward(&self, x: Var<'t>, train: bool) -> Result<(Var<'t>, Option<BatchStats>)> {
        let mut h = self.first.forward(x)?;
        let mut stats = None;
        if let Some((mean, std)) = self.running {
            if train && h.with_value(Tensor::rows) > 1 {
                let mu = h.mean_axis(0)?;
                let centered = h.sub(mu)?;
                let var = centered.square().mean_axis(0)?;
                let sd = var.add_scalar(BN_EPS).sqrt()?;
                stats = Some(BatchStats {
                    mean: mu.value().data().to_vec(),
                    var: var.value().data().to_vec(),
                });
                h = centered.div(sd)?;
            } else {
                h = h.sub(mean)?.div(std)?;
            }
        }
        let z = self.second.forward(h.relu())?.l2_normalize_rows()?;
        Ok((z, stats))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub head_hidden: usize,
    pub embed_dim: usize,
    pub classes: usize,
    pub batch_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            encoder_widths: vec![64, 32],
            head_hidden: 32,
            embed_dim: 16,
            classes: 3,
            batch_norm: true,
        }
    }
}

/// Encoder `f`, projection head `h` and a linear classifier on `f(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub head: Option<ProjectionHead>,
    pub classifier: Linear,
}

impl Model {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let encoder = Encoder::new(cfg.input_dim, &cfg.encoder_widths, rng);
        let feat = encoder.output_dim();
        let head = ProjectionHead::new(feat, cfg.head_hidden, cfg.embed_dim, cfg.batch_norm, rng);
        let classifier = Linear::new(feat, cfg.classes, rng);
        Self {
            encoder,
            head: Some(head),
            classifier,
        }
    }

    /// A model whose encoder and head start from the anchor's weights, with a
    /// freshly initialised classifier.
    pub fn from_anchor(anchor: &AnchorEncoder, classes: usize, rng: &mut Rng) -> Self {
        let encoder = anchor.encoder.clone();
        let classifier = Linear::new(encoder.output_dim(), classes, rng);
        Self {
            encoder,
            head: anchor.head.clone(),
            classifier,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.head
            .as_ref()
            .map_or(self.encoder.output_dim(), ProjectionHead::output_dim)
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t>) -> BoundModel<'t> {
        BoundModel {
            encoder: self.encoder.bind(b),
            head: self.head.as_ref().map(|h| h.bind(b)),
            classifier: self.classifier.bind(b),
        }
    }

    /// Fold batch statistics from a training forward into the running ones.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        if let Some(norm) = self.head.as_mut().and_then(|h| h.norm.as_mut()) {
            norm.update(stats);
        }
    }

    /// Evaluation-mode unit-norm embeddings.
    pub fn embed_eval(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&mut Binder::frozen(&tape));
        let z = embed(&bound, tape.constant(x), false)?.0;
        Ok(z.value().as_ref().clone())
    }

    /// Evaluation-mode encoder features.
    pub fn features_eval(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&mut Binder::frozen(&tape));
        let f = bound.encoder.forward(tape.constant(x))?;
        Ok(f.value().as_ref().clone())
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let tape = Tape::new();
        let bound = self.bind(&mut Binder::frozen(&tape));
        let logits = bound.logits(bound.encoder.forward(tape.constant(x))?)?;
        let v = logits.value();
        Ok((0..v.rows()).map(|i| argmax(v.row(i))).collect())
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

impl Parameters for Model {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        if let Some(h) = &self.head {
            p.extend(h.params());
        }
        p.extend(self.classifier.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        if let Some(h) = &mut self.head {
            p.extend(h.params_mut());
        }
        p.extend(self.classifier.params_mut());
        p
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub struct BoundModel<'t> {
    pub encoder: BoundEncoder<'t>,
    pub head: Option<BoundHead<'t>>,
    pub classifier: BoundLinear<'t>,
}

impl<'t> BoundModel<'t> {
    pub fn logits(&self, features: Var<'t>) -> Result<Var<'t>> {
        self.classifier.forward(features)
    }

    /// Unit-norm embedding of encoder features.
    pub fn project(&self, features: Var<'t>, train: bool) -> Result<(Var<'t>, Option<BatchStats>)> {
        match &self.head {
            Some(h) => h.forward(features, train),
            None => Ok((features.l2_normalize_rows()?, None)),
        }
    }
}

/// `z = normalize(h(f(x)))`, or `normalize(f(x))` for a headless model.
pub fn embed<'t>(
    model: &BoundModel<'t>,
    batch: Var<'t>,
    train: bool,
) -> Result<(Var<'t>, Option<BatchStats>)> {
    let features = model.encoder.forward(batch)?;
    model.project(features, train)
}

/// How an anchor was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub data_hash: String,
    pub steps: usize,
    pub validation_accuracy: f64,
}

/// Frozen encoder and head. No mutable access is exposed after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorEncoder {
    encoder: Encoder,
    head: Option<ProjectionHead>,
    provenance: Provenance,
}

impl AnchorEncoder {
    pub fn from_parts(encoder: Encoder, head: Option<ProjectionHead>, provenance: Provenance) -> Self {
        Self {
            encoder,
            head,
            provenance,
        }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn head(&self) -> Option<&ProjectionHead> {
        self.head.as_ref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.head
            .as_ref()
            .map_or(self.encoder.output_dim(), ProjectionHead::output_dim)
    }

    /// Evaluation-mode unit-norm embedding, detached from any tape.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let mut b = Binder::frozen(&tape);
        let encoder = self.encoder.bind(&mut b);
        let head = self.head.as_ref().map(|h| h.bind(&mut b));
        let f = encoder.forward(tape.constant(x))?;
        let z = match head {
            Some(h) => h.forward(f, false)?.0,
            None => f.l2_normalize_rows()?,
        };
        Ok(z.value().as_ref().clone())
    }

    /// Anchor embeddings registered on `tape` as constants.
    pub fn embed_on<'t>(&self, tape: &'t Tape, x: &Tensor) -> Result<Var<'t>> {
        Ok(tape.constant(&self.embed(x)?))
    }

    /// SHA-256 over every weight and running statistic.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |vals: &[f64]| {
            for v in vals {
                h.update(v.to_bits().to_le_bytes());
            }
        };
        for p in self.encoder.params() {
            feed(p.data());
        }
        if let Some(head) = &self.head {
            for p in head.params() {
                feed(p.data());
            }
            if let Some(n) = &head.norm {
                feed(&n.running_mean);
                feed(&n.running_var);
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            lr: 1e-3,
            batch_size: 24,
        }
    }
}

/// Train an encoder with plain cross-entropy on pooled data from every
/// domain, then freeze it. 20% of each domain is kept aside to measure the
/// anchor's validation accuracy, and the head's running statistics are set
/// to the exact statistics of the pooled data.
pub fn build_anchor(
    pooled: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &AnchorConfig,
    seed: u64,
) -> Result<AnchorEncoder> {
    if pooled.is_empty() {
        return Err(Error::InvalidArgument("cannot build an anchor from an empty dataset".into()));
    }
    let mut split_rng = rng::stream(seed, "anchor-split");
    let (train_idx, val_idx) = pooled.split_per_domain(0.8, &mut split_rng);
    let train = pooled.subset(&train_idx);
    let mut model = Model::new(model_cfg, &mut rng::stream(seed, "anchor-init"));
    let mut opt = Adam::new(cfg.lr);
    let mut batches = make_batches(&train, cfg.batch_size, seed)?;
    for step in 0..cfg.steps {
        let idx = batches.next_batch();
        let x = train.features(&idx);
        let y = train.labels(&idx);
        let tape = Tape::new();
        let mut b = Binder::trainable(&tape);
        let bound = model.bind(&mut b);
        let logits = bound.logits(bound.encoder.forward(tape.constant(&x))?)?;
        let loss = erm_loss(logits, &y)?;
        if !loss.value().item().is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = b.gradients(&tape.backward(loss)?);
        opt.step(model.params_mut(), &grads);
    }

    let validation_accuracy = if val_idx.is_empty() {
        f64::NAN
    } else {
        let val = pooled.subset(&val_idx);
        model.accuracy(&val.features_all(), &val.labels_all())?
    };

    let all = pooled.features_all();
    if let Some(head) = model.head.as_mut() {
        if head.norm.is_some() {
            let feats = model.encoder.clone();
            let f = {
                let tape = Tape::new();
                let bound = feats.bind(&mut Binder::frozen(&tape));
                let h = head.first.bind(&mut Binder::frozen(&tape));
                let v = h.forward(bound.forward(tape.constant(&all))?)?.value();
                v.as_ref().clone()
            };
            let (n, w) = (f.rows() as f64, f.cols());
            let mut mean = vec![0.0; w];
            for i in 0..f.rows() {
                mean.iter_mut().zip(f.row(i)).for_each(|(m, v)| *m += v / n);
            }
            let mut var = vec![0.0; w];
            for i in 0..f.rows() {
                for (j, v) in f.row(i).iter().enumerate() {
                    var[j] += (v - mean[j]).powi(2) / n;
                }
            }
            head.norm = Some(BatchStandardize {
                running_mean: mean,
                running_var: var,
            });
        }
    }

    Ok(AnchorEncoder {
        encoder: model.encoder,
        head: model.head,
        provenance: Provenance {
            seed,
            data_hash: pooled.content_hash(),
            steps: cfg.steps,
            validation_accuracy,
        },
    })
}

/// Variational map from the learned embedding `z` to the anchor embedding.
///
/// The mean encoder is the identity, so the latent width equals `z`'s width.
/// The standard deviation is `softplus(sigma_bias)`, shared across samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeTransformer {
    pub sigma_bias: Tensor,
    pub decoder: Linear,
}

/// `softplus^-1(s)` for `s > 0`.
pub fn inverse_softplus(s: f64) -> f64 {
    s + (-(-s).exp_m1()).ln()
}

impl GenerativeTransformer {
    pub const INIT_SIGMA: f64 = 0.1;

    /// Decoder starts as the identity when widths agree.
    pub fn new(latent: usize, target: usize, rng: &mut Rng) -> Self {
        let decoder = if latent == target {
            Linear::identity(latent)
        } else {
            Linear::new(latent, target, rng)
        };
        Self {
            sigma_bias: Tensor::full(&[1, latent], inverse_softplus(Self::INIT_SIGMA)),
            decoder,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.sigma_bias.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.sigma_bias
            .data()
            .iter()
            .map(|&b| b.max(0.0) + (-b.abs()).exp().ln_1p())
            .collect()
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t>) -> BoundGenerative<'t> {
        BoundGenerative {
            sigma_bias: b.bind(&self.sigma_bias),
            decoder: self.decoder.bind(b),
        }
    }
}

impl Parameters for GenerativeTransformer {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = vec![&self.sigma_bias];
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![&mut self.sigma_bias];
        p.extend(self.decoder.params_mut());
        p
    }
}

pub struct BoundGenerative<'t> {
    sigma_bias: Var<'t>,
    decoder: BoundLinear<'t>,
}

pub struct Transformed<'t> {
    pub z_lat: Var<'t>,
    pub reconstruction: Var<'t>,
    /// `n x 1`, closed-form divergence from the unit Gaussian.
    pub kl_per_sample: Var<'t>,
}

/// Reparameterised sample `z_lat = z + sigma * noise`, decoded, with the
/// diagonal-Gaussian KL to the standard normal prior:
/// `0.5 * sum_j (sigma_j^2 + z_j^2 - 1 - ln sigma_j^2)`.
pub fn transform<'t>(g: &BoundGenerative<'t>, z: Var<'t>, noise: &Tensor) -> Result<Transformed<'t>> {
    let zs = z.shape();
    if noise.shape() != zs.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "transform noise",
            left: zs,
            right: noise.shape().to_vec(),
        });
    }
    let tape = z.tape();
    let sigma = g.sigma_bias.softplus();
    let z_lat = z.add(sigma.mul(tape.constant(noise))?)?;
    let reconstruction = g.decoder.forward(z_lat)?;
    let sigma_sq = sigma.square();
    let per_dim = sigma_sq.sub(sigma_sq.log()?)?.add_scalar(-1.0).sum();
    let kl_per_sample = z.square().sum_axis(1)?.add(per_dim)?.scale(0.5);
    Ok(Transformed {
        z_lat,
        reconstruction,
        kl_per_sample,
    })
}

/// Standard-normal draw of the given shape.
pub fn standard_normal(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}
