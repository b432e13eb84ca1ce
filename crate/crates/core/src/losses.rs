//! Training objectives: cross-entropy, contrastive InfoNCE with self,
//! cross-domain and anchored positives, the generative transformation loss,
//! and their weighted sum.

use std::rc::Rc;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autodiff::{concat_rows, Var};
use crate::error::{Error, Result};
use crate::nets::{transform, BoundGenerative};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Tolerance on `|‖z‖ - 1|` for rows entering a contrastive loss.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenominatorMode {
    /// Denominator sums over negatives only.
    #[default]
    NegativesOnly,
    /// The positive term is also part of the denominator.
    Standard,
}

impl FromStr for DenominatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negatives-only" => Ok(Self::NegativesOnly),
            "standard-infonce" => Ok(Self::Standard),
            other => Err(Error::config(
                "loss.denominator_mode",
                format!("unknown mode `{other}` (expected negatives-only or standard-infonce)"),
            )),
        }
    }
}

impl std::fmt::Display for DenominatorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NegativesOnly => "negatives-only",
            Self::Standard => "standard-infonce",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub beta: f64,
    pub temperature: f64,
    pub cdc_enabled: bool,
    pub pma_enabled: bool,
    pub gt_enabled: bool,
    pub self_contrast_only: bool,
    pub aggressive_augmentation: bool,
    pub denominator_mode: DenominatorMode,
    pub pma_probability: f64,
    /// Let other samples' anchor embeddings act as negatives.
    pub anchor_negatives: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            beta: 0.05,
            temperature: 0.1,
            cdc_enabled: false,
            pma_enabled: false,
            gt_enabled: false,
            self_contrast_only: false,
            aggressive_augmentation: false,
            denominator_mode: DenominatorMode::NegativesOnly,
            pma_probability: 0.5,
            anchor_negatives: false,
        }
    }
}

impl LossConfig {
    /// Plain cross-entropy.
    pub fn erm() -> Self {
        Self::default()
    }

    /// Every component on, with aggressive augmentation.
    pub fn full() -> Self {
        Self {
            cdc_enabled: true,
            pma_enabled: true,
            gt_enabled: true,
            aggressive_augmentation: true,
            ..Self::default()
        }
    }

    pub fn contrast_enabled(&self) -> bool {
        self.cdc_enabled || self.pma_enabled || self.self_contrast_only
    }

    pub fn needs_anchor(&self) -> bool {
        self.pma_enabled || self.gt_enabled
    }

    pub fn validate(&self, anchor_available: bool) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("loss.temperature", "must be a positive finite number"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config("loss.lambda", "must be non-negative"));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::config("loss.beta", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.pma_probability) {
            return Err(Error::config("loss.pma_probability", "must lie in [0, 1]"));
        }
        if self.self_contrast_only && self.cdc_enabled {
            return Err(Error::config(
                "loss.self_contrast_only",
                "cannot be combined with loss.cdc_enabled",
            ));
        }
        if self.needs_anchor() && !anchor_available {
            let key = if self.pma_enabled { "loss.pma_enabled" } else { "loss.gt_enabled" };
            return Err(Error::config(key, "requires anchor embeddings"));
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy.
pub fn erm_loss<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "erm_loss",
            left: shape,
            right: vec![labels.len()],
        });
    }
    let classes = shape[1];
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let shifted = logits.sub(logits.gather(labels)?)?;
    Ok(shifted.logsumexp_rows(None)?.mean())
}

/// Where a sample's positive embedding comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Positive {
    /// Second view of sample `j`; `j == i` is plain self-contrast.
    View(usize),
    /// The sample's own anchor embedding.
    Anchor,
}

/// Every sample is its own positive through its second view.
pub fn self_positives(n: usize) -> Vec<Positive> {
    (0..n).map(Positive::View).collect()
}

/// Uniformly random same-class partner `j != i` from any domain. A sample
/// alone in its class falls back to its own second view.
pub fn sample_positives_cdc(labels: &[usize], rng: &mut Rng) -> Vec<Positive> {
    let mut eligible = Vec::with_capacity(labels.len());
    (0..labels.len())
        .map(|i| {
            eligible.clear();
            eligible.extend((0..labels.len()).filter(|&j| j != i && labels[j] == labels[i]));
            Positive::View(*eligible.choose(rng).unwrap_or(&i))
        })
        .collect()
}

/// Replace each positive by the anchor independently with probability `p`.
pub fn mix_anchor_positives(assignment: &[Positive], p: f64, rng: &mut Rng) -> Result<Vec<Positive>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("anchor probability {p} outside [0, 1]")));
    }
    Ok(assignment
        .iter()
        .map(|&a| if rng.gen_bool(p) { Positive::Anchor } else { a })
        .collect())
}

/// One contrastive batch: two augmented views of `n` samples, optional
/// detached anchor embeddings of the first view, and a positive per sample.
pub struct ContrastBatch<'t> {
    pub view1: Var<'t>,
    pub view2: Var<'t>,
    pub anchors: Option<Var<'t>>,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
    pub positives: Vec<Positive>,
}

impl<'t> ContrastBatch<'t> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.positives.len() != n || self.domains.len() != n {
            return Err(Error::InvalidArgument(format!(
                "contrast batch has {n} labels, {} domains and {} positives",
                self.domains.len(),
                self.positives.len()
            )));
        }
        let mut parts = vec![self.view1, self.view2];
        parts.extend(self.anchors);
        for v in parts {
            let shape = v.shape();
            if shape.len() != 2 || shape[0] != n {
                return Err(Error::ShapeMismatch {
                    op: "contrast batch",
                    left: shape,
                    right: vec![n],
                });
            }
            v.with_value(check_unit_rows)?;
        }
        for (i, p) in self.positives.iter().enumerate() {
            match *p {
                Positive::View(j) if j >= n => {
                    return Err(Error::InvalidArgument(format!("positive {j} for sample {i} out of range")))
                }
                Positive::View(j) if self.labels[j] != self.labels[i] => {
                    return Err(Error::InvalidArgument(format!(
                        "positive {j} for sample {i} has class {}, expected {}",
                        self.labels[j], self.labels[i]
                    )))
                }
                Positive::Anchor if self.anchors.is_none() => {
                    return Err(Error::InvalidArgument(format!(
                        "sample {i} uses an anchor positive but no anchor embeddings were given"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn check_unit_rows(t: &Tensor) -> Result<()> {
    for i in 0..t.rows() {
        let norm = t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(Error::Degenerate {
                op: "info_nce",
                detail: format!("row {i} has norm {norm}, expected 1"),
            });
        }
    }
    Ok(())
}

/// Contrastive loss over a batch.
///
/// Similarities are taken between `view1` and the candidate set
/// `[view1; view2; anchors]`, divided by the temperature. The negatives of
/// sample `i` are both views of every other sample, plus the other samples'
/// anchors when `anchor_negatives` is set; the positive's column is never a
/// negative. Per sample the loss is `logsumexp(negatives) - positive`.
pub fn info_nce<'t>(batch: &ContrastBatch<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    batch.validate()?;
    let n = batch.len();
    let mut parts = vec![batch.view1, batch.view2];
    let with_anchors = batch.anchors.is_some();
    parts.extend(batch.anchors);
    let candidates = concat_rows(&parts)?;
    let m = candidates.with_value(Tensor::rows);
    let sims = batch
        .view1
        .matmul(candidates.transpose()?)?
        .scale(1.0 / cfg.temperature);

    let mut mask = vec![false; n * m];
    let mut pos_cols = Vec::with_capacity(n);
    for i in 0..n {
        let row = &mut mask[i * m..(i + 1) * m];
        for k in (0..n).filter(|&k| k != i) {
            row[k] = true;
            row[n + k] = true;
            if with_anchors && cfg.anchor_negatives {
                row[2 * n + k] = true;
            }
        }
        let pos = match batch.positives[i] {
            Positive::View(j) => n + j,
            Positive::Anchor => 2 * n + i,
        };
        row[pos] = cfg.denominator_mode == DenominatorMode::Standard;
        pos_cols.push(pos);
    }
    if n < 2 && cfg.denominator_mode == DenominatorMode::NegativesOnly {
        return Err(Error::Degenerate {
            op: "info_nce",
            detail: "negative pool is empty".into(),
        });
    }
    let lse = sims.logsumexp_rows(Some(Rc::from(mask)))?;
    Ok(lse.sub(sims.gather(&pos_cols)?)?.mean())
}

/// Contrastive loss with explicit positives and a shared negative pool:
/// row `i` of `z` is paired with row `i` of `positives` and contrasted with
/// every row of `negatives`.
pub fn info_nce_pool<'t>(
    z: Var<'t>,
    positives: Var<'t>,
    negatives: Var<'t>,
    temperature: f64,
    mode: DenominatorMode,
) -> Result<Var<'t>> {
    if z.shape() != positives.shape() {
        return Err(Error::ShapeMismatch {
            op: "info_nce_pool",
            left: z.shape(),
            right: positives.shape(),
        });
    }
    for v in [z, positives, negatives] {
        v.with_value(check_unit_rows)?;
    }
    let pos = z.mul(positives)?.sum_axis(1)?.scale(1.0 / temperature);
    let neg = z.matmul(negatives.transpose()?)?.scale(1.0 / temperature);
    let denom = match mode {
        DenominatorMode::NegativesOnly => neg,
        DenominatorMode::Standard => concat_rows(&[pos.transpose()?, neg.transpose()?])?.transpose()?,
    };
    Ok(denom.logsumexp_rows(None)?.sub(pos)?.mean())
}

/// Reconstruction of the anchor embedding through the generative
/// transformer plus the divergence of its posterior from the unit Gaussian,
/// averaged over the batch.
pub fn gen_loss<'t>(g: &BoundGenerative<'t>, z: Var<'t>, z_pre: Var<'t>, noise: &Tensor) -> Result<Var<'t>> {
    let t = transform(g, z, noise)?;
    if t.reconstruction.shape() != z_pre.shape() {
        return Err(Error::ShapeMismatch {
            op: "gen_loss",
            left: t.reconstruction.shape(),
            right: z_pre.shape(),
        });
    }
    let recon = z_pre.sub(t.reconstruction)?.square().sum_axis(1)?;
    Ok(recon.add(t.kl_per_sample)?.mean())
}

pub struct GenerativeInputs<'a, 't> {
    pub transformer: &'a BoundGenerative<'t>,
    pub z: Var<'t>,
    pub z_pre: Var<'t>,
    pub noise: Tensor,
}

/// Weighted contributions to the objective; `erm + contrast + gen == total`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub erm: f64,
    pub contrast: f64,
    pub gen: f64,
    pub total: f64,
}

/// `erm + lambda * contrast + beta * gen`, where the contrastive term is
/// present iff some contrast is enabled and the generative term iff
/// `gt_enabled`.
pub fn total_loss<'t>(
    logits: Var<'t>,
    labels: &[usize],
    contrast: Option<&ContrastBatch<'t>>,
    generative: Option<&GenerativeInputs<'_, 't>>,
    cfg: &LossConfig,
) -> Result<(Var<'t>, LossBreakdown)> {
    let erm = erm_loss(logits, labels)?;
    let mut total = erm;
    let mut out = LossBreakdown {
        erm: erm.value().item(),
        ..Default::default()
    };
    if cfg.contrast_enabled() {
        let batch = contrast.ok_or_else(|| {
            Error::InvalidArgument("contrast is enabled but no contrast batch was given".into())
        })?;
        let term = info_nce(batch, cfg)?.scale(cfg.lambda);
        out.contrast = term.value().item();
        total = total.add(term)?;
    }
    if cfg.gt_enabled {
        let g = generative.ok_or_else(|| {
            Error::InvalidArgument("generative transformation is enabled but no inputs were given".into())
        })?;
        let term = gen_loss(g.transformer, g.z, g.z_pre, &g.noise)?.scale(cfg.beta);
        out.gen = term.value().item();
        total = total.add(term)?;
    }
    out.total = total.value().item();
    Ok((total, out))
}

/// One line of a run's loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub breakdown: LossBreakdown,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,erm,contrast,gen,total";

    pub fn to_csv(&self) -> String {
        let b = &self.breakdown;
        format!("{},{:.10e},{:.10e},{:.10e},{:.10e}", self.step, b.erm, b.contrast, b.gen, b.total)
    }
}
