//! Finite-difference checks of every loss, each over randomized small
//! batches. Every function returns the per-batch maximum relative error.

use super::{gaussian, labels, max_grad_error};
use dccl_core::autodiff::{Tape, Var};
use dccl_core::losses::{
    erm_loss, gen_loss, info_nce, info_nce_pool, mix_anchor_positives, sample_positives_cdc, self_positives,
    total_loss, ContrastBatch, DenominatorMode, GenerativeInputs, LossConfig, Positive,
};
use dccl_core::nets::{Binder, GenerativeTransformer, Linear};
use dccl_core::rng::{self, Rng};
use dccl_core::Tensor;
use rand::Rng as _;

pub const BATCHES: u64 = 24;
pub const TOL: f64 = 1e-4;

struct Shape {
    n: usize,
    d: usize,
    classes: usize,
}

fn shape(rng: &mut Rng) -> Shape {
    let classes = rng.gen_range(2..=3);
    Shape {
        n: rng.gen_range(2 * classes..=8),
        d: rng.gen_range(2..=5),
        classes,
    }
}

fn unit<'t>(tape: &'t Tape, x: &Tensor) -> (Var<'t>, Var<'t>) {
    let p = tape.param(x);
    (p.l2_normalize_rows().unwrap(), p)
}

fn generative(sigma_bias: &Tensor, weight: &Tensor, bias: &Tensor) -> GenerativeTransformer {
    GenerativeTransformer {
        sigma_bias: sigma_bias.clone(),
        decoder: Linear {
            weight: weight.clone(),
            bias: bias.clone(),
        },
    }
}

fn contrast(tag: &str, mode: DenominatorMode, positives: impl Fn(&[usize], &mut Rng) -> Vec<Positive>, anchor_negatives: bool) -> Vec<f64> {
    (0..BATCHES)
        .map(|b| {
            let mut r = rng::stream(b, tag);
            let s = shape(&mut r);
            let y = labels(s.n, s.classes, &mut r);
            let pos = positives(&y, &mut r);
            let uses_anchor = pos.contains(&Positive::Anchor) || anchor_negatives;
            let cfg = LossConfig {
                denominator_mode: mode,
                anchor_negatives,
                temperature: r.gen_range(0.1..1.0),
                ..LossConfig::default()
            };
            let inputs = vec![gaussian(s.n, s.d, &mut r), gaussian(s.n, s.d, &mut r), gaussian(s.n, s.d, &mut r)];
            max_grad_error(&inputs, |tape, xs| {
                let (v1, p1) = unit(tape, &xs[0]);
                let (v2, p2) = unit(tape, &xs[1]);
                let (a, p3) = unit(tape, &xs[2]);
                let batch = ContrastBatch {
                    view1: v1,
                    view2: v2,
                    anchors: uses_anchor.then_some(a),
                    labels: y.clone(),
                    domains: vec![0; y.len()],
                    positives: pos.clone(),
                };
                (info_nce(&batch, &cfg).unwrap(), vec![p1, p2, p3])
            })
        })
        .collect()
}

pub fn erm() -> Vec<f64> {
    (0..BATCHES)
        .map(|b| {
            let mut r = rng::stream(b, "erm");
            let s = shape(&mut r);
            let y = labels(s.n, s.classes, &mut r);
            let logits = gaussian(s.n, s.classes, &mut r).map(|v| 3.0 * v);
            max_grad_error(&[logits], |tape, xs| {
                let l = tape.param(&xs[0]);
                (erm_loss(l, &y).unwrap(), vec![l])
            })
        })
        .collect()
}

/// Self-augmented positives.
pub fn self_contrast(mode: DenominatorMode) -> Vec<f64> {
    contrast("self", mode, |y, _| self_positives(y.len()), false)
}

/// Same-class positives across domains.
pub fn cross_domain(mode: DenominatorMode) -> Vec<f64> {
    contrast("cdc", mode, sample_positives_cdc, false)
}

/// Cross-domain positives mixed with anchor positives at probability 1/2.
pub fn anchored(mode: DenominatorMode, anchor_negatives: bool) -> Vec<f64> {
    let mixed = |y: &[usize], r: &mut Rng| mix_anchor_positives(&sample_positives_cdc(y, r), 0.5, r).unwrap();
    contrast("pma", mode, mixed, anchor_negatives)
}

pub fn pooled() -> Vec<f64> {
    (0..BATCHES)
        .map(|b| {
            let mut r = rng::stream(b, "pool");
            let s = shape(&mut r);
            let k = r.gen_range(1..=6);
            let mode = if b % 2 == 0 { DenominatorMode::NegativesOnly } else { DenominatorMode::Standard };
            let inputs = vec![gaussian(s.n, s.d, &mut r), gaussian(s.n, s.d, &mut r), gaussian(k, s.d, &mut r)];
            max_grad_error(&inputs, |tape, xs| {
                let (z, p1) = unit(tape, &xs[0]);
                let (pos, p2) = unit(tape, &xs[1]);
                let (neg, p3) = unit(tape, &xs[2]);
                (info_nce_pool(z, pos, neg, 0.1, mode).unwrap(), vec![p1, p2, p3])
            })
        })
        .collect()
}

/// Reconstruction plus divergence, through the transformer's parameters.
pub fn generative_transformation() -> Vec<f64> {
    (0..BATCHES)
        .map(|b| {
            let mut r = rng::stream(b, "gen");
            let s = shape(&mut r);
            let d_pre = r.gen_range(2..=5);
            let noise = gaussian(s.n, s.d, &mut r);
            let inputs = vec![
                gaussian(s.n, s.d, &mut r),
                gaussian(s.n, d_pre, &mut r),
                gaussian(1, s.d, &mut r),
                gaussian(s.d, d_pre, &mut r),
                gaussian(1, d_pre, &mut r),
            ];
            max_grad_error(&inputs, |tape, xs| {
                let (z, pz) = unit(tape, &xs[0]);
                let (z_pre, pp) = unit(tape, &xs[1]);
                let g = generative(&xs[2], &xs[3], &xs[4]);
                let mut binder = Binder::trainable(tape);
                let bound = g.bind(&mut binder);
                let loss = gen_loss(&bound, z, z_pre, &noise).unwrap();
                let mut vars = vec![pz, pp];
                vars.extend_from_slice(binder.vars());
                (loss, vars)
            })
        })
        .collect()
}

/// Cross-entropy plus weighted contrast plus weighted generative term.
pub fn total() -> Vec<f64> {
    (0..BATCHES)
        .map(|b| {
            let mut r = rng::stream(b, "total");
            let s = shape(&mut r);
            let y = labels(s.n, s.classes, &mut r);
            let cfg = LossConfig {
                lambda: r.gen_range(0.1..5.0),
                beta: r.gen_range(0.01..0.1),
                ..LossConfig::full()
            };
            let pos = mix_anchor_positives(&sample_positives_cdc(&y, &mut r), cfg.pma_probability, &mut r).unwrap();
            let noise = gaussian(s.n, s.d, &mut r);
            let inputs = vec![
                gaussian(s.n, s.classes, &mut r),
                gaussian(s.n, s.d, &mut r),
                gaussian(s.n, s.d, &mut r),
                gaussian(s.n, s.d, &mut r),
                gaussian(1, s.d, &mut r),
                gaussian(s.d, s.d, &mut r),
                gaussian(1, s.d, &mut r),
            ];
            max_grad_error(&inputs, |tape, xs| {
                let logits = tape.param(&xs[0]);
                let (v1, p1) = unit(tape, &xs[1]);
                let (v2, p2) = unit(tape, &xs[2]);
                let (a, p3) = unit(tape, &xs[3]);
                let g = generative(&xs[4], &xs[5], &xs[6]);
                let mut binder = Binder::trainable(tape);
                let bound = g.bind(&mut binder);
                let batch = ContrastBatch {
                    view1: v1,
                    view2: v2,
                    anchors: Some(a),
                    labels: y.clone(),
                    domains: vec![0; y.len()],
                    positives: pos.clone(),
                };
                let gen = GenerativeInputs {
                    transformer: &bound,
                    z: v1,
                    z_pre: a,
                    noise: noise.clone(),
                };
                let (loss, parts) = total_loss(logits, &y, Some(&batch), Some(&gen), &cfg).unwrap();
                let sum = parts.erm + parts.contrast + parts.gen;
                assert!((sum - parts.total).abs() <= 1e-12 * parts.total.abs().max(1.0));
                let mut vars = vec![logits, p1, p2, p3];
                vars.extend_from_slice(binder.vars());
                (loss, vars)
            })
        })
        .collect()
}

/// Every check, labelled.
pub fn suite() -> Vec<(&'static str, Vec<f64>)> {
    use DenominatorMode::{NegativesOnly, Standard};
    vec![
        ("erm", erm()),
        ("self-contrast/negatives-only", self_contrast(NegativesOnly)),
        ("self-contrast/standard", self_contrast(Standard)),
        ("cdc/negatives-only", cross_domain(NegativesOnly)),
        ("cdc/standard", cross_domain(Standard)),
        ("pma/negatives-only", anchored(NegativesOnly, false)),
        ("pma/anchor-negatives", anchored(NegativesOnly, true)),
        ("pma/standard", anchored(Standard, false)),
        ("info-nce-pool", pooled()),
        ("gen", generative_transformation()),
        ("total", total()),
    ]
}
