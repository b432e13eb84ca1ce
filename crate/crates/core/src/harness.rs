//! Training loop, leave-one-domain-out protocol, ablation grid and the
//! artifacts each run leaves on disk.
//!
//! A run directory holds:
//!
//! ```text
//! <out>/<experiment>/<row>/seed-<s>/heldout-<m>/
//!     config.toml      the exact configuration of the run
//!     loss.csv         step,erm,contrast,gen,total
//!     batches.log      one line per step: the dataset indices in the batch
//!     eval.csv         step,val_accuracy,intra_class_variance
//!     checkpoint.txt   selected model (if output.save_checkpoints)
//!     embeddings.dump  encoder features of every sample (if output.dump_embeddings)
//!     result.txt       key = value summary
//! <out>/<experiment>/anchor/seed-<s>.txt   frozen anchor checkpoint, when one is built
//! ```
//!
//! Every number in these files is a function of the configuration and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::connectivity::{connectivity_report, EmbeddingDump, EmbeddingRecord, Mode};
use crate::error::{Error, Result};
use crate::losses::{
    mix_anchor_positives, sample_positives_cdc, self_positives, total_loss, ContrastBatch, GenerativeInputs,
    LossBreakdown, LossRecord,
};
use crate::nets::{build_anchor, standard_normal, AnchorEncoder, Binder, Encoder, GenerativeTransformer, Model, Parameters};
use crate::optim::Adam;
use crate::rng;
use crate::synthdata::{make_batches, Dataset};
use crate::tensor::Tensor;

/// The rows of the component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AblationRow {
    Erm,
    SelfContrast,
    Cdc,
    Pma,
    Gt,
    PmaGt,
    CdcPma,
    CdcGt,
    FullNoAggressive,
    Full,
}

impl AblationRow {
    pub const ALL: [AblationRow; 10] = [
        Self::Erm,
        Self::SelfContrast,
        Self::Cdc,
        Self::Pma,
        Self::Gt,
        Self::PmaGt,
        Self::CdcPma,
        Self::CdcGt,
        Self::FullNoAggressive,
        Self::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Erm => "erm",
            Self::SelfContrast => "self-contrast",
            Self::Cdc => "cdc",
            Self::Pma => "pma",
            Self::Gt => "gt",
            Self::PmaGt => "pma+gt",
            Self::CdcPma => "cdc+pma",
            Self::CdcGt => "cdc+gt",
            Self::FullNoAggressive => "full-no-aggressive",
            Self::Full => "full",
        }
    }

    /// `(cdc, pma, gt)`
    pub fn components(self) -> (bool, bool, bool) {
        match self {
            Self::Erm | Self::SelfContrast => (false, false, false),
            Self::Cdc => (true, false, false),
            Self::Pma => (false, true, false),
            Self::Gt => (false, false, true),
            Self::PmaGt => (false, true, true),
            Self::CdcPma => (true, true, false),
            Self::CdcGt => (true, false, true),
            Self::FullNoAggressive | Self::Full => (true, true, true),
        }
    }

    /// Aggressive augmentation accompanies cross-domain contrast, except in
    /// the row that exists to switch it off.
    pub fn aggressive(self) -> bool {
        self.components().0 && self != Self::FullNoAggressive
    }

    /// `base` with this row's switches; weights and everything else kept.
    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        let (cdc, pma, gt) = self.components();
        cfg.loss.cdc_enabled = cdc;
        cfg.loss.pma_enabled = pma;
        cfg.loss.gt_enabled = gt;
        cfg.loss.self_contrast_only = self == Self::SelfContrast;
        cfg.loss.aggressive_augmentation = self.aggressive();
        cfg
    }
}

impl FromStr for AblationRow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation row `{s}`")))
    }
}

/// Which samples a run may touch.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Hold out `held_out`; split every other domain `fraction : 1 - fraction`
/// into training and validation, then keep `ceil(label_ratio * N_train)`
/// training samples chosen by the seed.
pub fn split_for(data: &Dataset, held_out: Option<usize>, fraction: f64, label_ratio: f64, seed: u64) -> Result<Split> {
    let source: Vec<usize> = (0..data.len())
        .filter(|&i| Some(data.samples[i].domain) != held_out)
        .collect();
    let test: Vec<usize> = (0..data.len())
        .filter(|&i| Some(data.samples[i].domain) == held_out)
        .collect();
    if let Some(m) = held_out {
        if test.is_empty() {
            return Err(Error::InvalidArgument(format!("held-out domain {m} has no samples")));
        }
    }
    if source.is_empty() {
        return Err(Error::InvalidArgument("no source-domain samples to train on".into()));
    }
    let (tr, va) = data.subset(&source).split_per_domain(fraction, &mut rng::stream(seed, "split"));
    let mut train: Vec<usize> = tr.into_iter().map(|i| source[i]).collect();
    let val = va.into_iter().map(|i| source[i]).collect();
    if label_ratio < 1.0 {
        let keep = ((label_ratio * train.len() as f64).ceil() as usize).clamp(1, train.len());
        train.shuffle(&mut rng::stream(seed, "labels"));
        train.truncate(keep);
        train.sort_unstable();
    }
    Ok(Split { train, val, test })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    pub val_accuracy: f64,
    /// Mean over classes of the within-class variance of the evaluation-mode
    /// embedding on the training samples.
    pub intra_class_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub row: String,
    pub seed: u64,
    pub held_out: Option<usize>,
    /// Accuracy on the held-out domain of the selected model; NaN without one.
    pub test_accuracy: f64,
    pub best_val_accuracy: f64,
    pub selected_step: usize,
    pub connectivity_init: Option<f64>,
    pub connectivity_selected: Option<f64>,
    /// Training-batch entries drawn from the held-out domain; always 0.
    pub heldout_in_batches: usize,
    pub final_loss: LossBreakdown,
    /// Not written to any artifact.
    pub wall_clock_ms: u128,
}

impl RunResult {
    pub fn to_key_values(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.16e}"));
        let mut s = String::new();
        writeln!(s, "row = {}", self.row).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "held_out = {}", self.held_out.map_or("none".into(), |m| m.to_string())).unwrap();
        writeln!(s, "test_accuracy = {:.16e}", self.test_accuracy).unwrap();
        writeln!(s, "best_val_accuracy = {:.16e}", self.best_val_accuracy).unwrap();
        writeln!(s, "selected_step = {}", self.selected_step).unwrap();
        writeln!(s, "connectivity_init = {}", opt(self.connectivity_init)).unwrap();
        writeln!(s, "connectivity_selected = {}", opt(self.connectivity_selected)).unwrap();
        writeln!(s, "heldout_in_batches = {}", self.heldout_in_batches).unwrap();
        let l = &self.final_loss;
        writeln!(s, "final_loss = {:.16e},{:.16e},{:.16e},{:.16e}", l.erm, l.contrast, l.gen, l.total).unwrap();
        s
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub model: Model,
    pub losses: Vec<LossRecord>,
    /// Dataset indices of every training batch, in order.
    pub batches: Vec<Vec<usize>>,
    pub evals: Vec<EvalPoint>,
}

/// Encoder features (the representation) of every row of `x`.
pub fn encoder_features(encoder: &Encoder, x: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let f = encoder.bind(&mut Binder::frozen(&tape)).forward(tape.constant(x))?;
    Ok(f.value().as_ref().clone())
}

/// One record per sample (optionally skipping a domain) holding its
/// evaluation-mode encoder features.
pub fn collect_embeddings(encoder: &Encoder, data: &Dataset, exclude_domain: Option<usize>) -> Result<EmbeddingDump> {
    let idx: Vec<usize> = (0..data.len())
        .filter(|&i| Some(data.samples[i].domain) != exclude_domain)
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidArgument("no samples to embed".into()));
    }
    let f = encoder_features(encoder, &data.features(&idx))?;
    let records = idx
        .iter()
        .enumerate()
        .map(|(r, &i)| EmbeddingRecord {
            id: i,
            domain: data.samples[i].domain,
            class: data.samples[i].class,
            vector: f.row(r).to_vec(),
        })
        .collect();
    Ok(EmbeddingDump {
        dim: f.cols(),
        classes: data.classes,
        domains: data.domains,
        records,
    })
}

/// Mean per-class connectivity score of the encoder's features over all of
/// `data`, pooling domains.
pub fn feature_connectivity(encoder: &Encoder, data: &Dataset) -> Result<Option<f64>> {
    let dump = collect_embeddings(encoder, data, None)?;
    Ok(connectivity_report(&dump.records, Mode::Pooled)?.mean_score)
}

/// Mean over classes of `(1/n_c) sum ||z_i - mean_c||^2`.
pub fn intra_class_variance(z: &Tensor, labels: &[usize]) -> f64 {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let d = z.cols();
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..classes {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in &rows {
            mean.iter_mut().zip(z.row(i)).for_each(|(m, v)| *m += v / n);
        }
        let var: f64 = rows
            .iter()
            .map(|&i| z.row(i).iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>())
            .sum::<f64>()
            / n;
        total += var;
        present += 1;
    }
    total / present.max(1) as f64
}

fn stack_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::matrix(a.rows() + b.rows(), a.cols(), data).expect("equal widths")
}

/// Train one model on `split.train`, select by validation accuracy and
/// measure the selected model once on `split.test`.
pub fn fit(
    cfg: &ExperimentConfig,
    data: &Dataset,
    split: &Split,
    held_out: Option<usize>,
    seed: u64,
    anchor: Option<&AnchorEncoder>,
) -> Result<RunOutput> {
    let started = Instant::now();
    let loss_cfg = cfg.loss_config()?;
    loss_cfg.validate(anchor.is_some())?;
    let model_cfg = cfg.model_config();
    if data.dim != model_cfg.input_dim {
        return Err(Error::WidthMismatch {
            expected: model_cfg.input_dim,
            actual: data.dim,
        });
    }
    if let Some(m) = held_out {
        if let Some(&bad) = split.train.iter().chain(&split.val).find(|&&i| data.samples[i].domain == m) {
            return Err(Error::InvalidArgument(format!(
                "sample {bad} of held-out domain {m} is in the training or validation split"
            )));
        }
    }

    let train = data.subset(&split.train);
    let mut batches = make_batches(&train, cfg.optimizer.batch_size, seed)?;
    let mut model = if cfg.protocol.init_from_anchor {
        let a = anchor.ok_or_else(|| Error::config("protocol.init_from_anchor", "requires an anchor"))?;
        Model::from_anchor(a, model_cfg.classes, &mut rng::stream(seed, "init"))
    } else {
        Model::new(&model_cfg, &mut rng::stream(seed, "init"))
    };
    let mut generative = match (loss_cfg.gt_enabled, anchor) {
        (true, Some(a)) => Some(GenerativeTransformer::new(
            model.embed_dim(),
            a.embed_dim(),
            &mut rng::stream(seed, "generative"),
        )),
        _ => None,
    };
    let mut opt = Adam::new(cfg.optimizer.lr);
    let mut gen_opt = Adam::new(cfg.optimizer.lr);
    let aug = cfg.augmentation.build(loss_cfg.aggressive_augmentation);
    let mut aug_rng = rng::stream(seed, "augment");
    let mut pos_rng = rng::stream(seed, "positives");
    let mut noise_rng = rng::stream(seed, "noise");

    let x_val = (!split.val.is_empty()).then(|| data.features(&split.val));
    let y_val = data.labels(&split.val);
    let x_train_all = train.features_all();
    let y_train_all = train.labels_all();
    let evaluate = |m: &Model, step: usize| -> Result<EvalPoint> {
        let val_accuracy = match &x_val {
            Some(x) => m.accuracy(x, &y_val)?,
            None => f64::NAN,
        };
        let z = m.embed_eval(&x_train_all)?;
        Ok(EvalPoint {
            step,
            val_accuracy,
            intra_class_variance: intra_class_variance(&z, &y_train_all),
        })
    };

    let connectivity_init = feature_connectivity(&model.encoder, data)?;
    let mut evals = vec![evaluate(&model, 0)?];
    let mut best = (evals[0].val_accuracy, 0usize, model.clone());
    let mut losses = Vec::with_capacity(cfg.optimizer.steps);
    let mut logged = Vec::with_capacity(cfg.optimizer.steps);
    let mut heldout_in_batches = 0;
    let contrast = loss_cfg.contrast_enabled();
    let need_z = contrast || loss_cfg.gt_enabled;

    for step in 1..=cfg.optimizer.steps {
        let local = batches.next_batch();
        let global: Vec<usize> = local.iter().map(|&i| split.train[i]).collect();
        heldout_in_batches += global
            .iter()
            .filter(|&&i| Some(data.samples[i].domain) == held_out)
            .count();
        let x = train.features(&local);
        let y = train.labels(&local);
        let n = local.len();
        let v1 = aug.apply_rows(&x, &mut aug_rng);
        let input = if contrast {
            stack_rows(&v1, &aug.apply_rows(&x, &mut aug_rng))
        } else {
            v1.clone()
        };

        let tape = Tape::new();
        let mut binder = Binder::trainable(&tape);
        let bound = model.bind(&mut binder);
        let mut gen_binder = Binder::trainable(&tape);
        let bound_gen = generative.as_ref().map(|g| g.bind(&mut gen_binder));

        let first: Vec<usize> = (0..n).collect();
        let feats = bound.encoder.forward(tape.constant(&input))?;
        let logits = bound.logits(if contrast { feats.select_rows(&first)? } else { feats })?;
        let mut stats = None;
        let mut views: Option<(Var, Var)> = None;
        if need_z {
            let (z, s) = bound.project(feats, true)?;
            stats = s;
            views = Some(if contrast {
                let second: Vec<usize> = (n..2 * n).collect();
                (z.select_rows(&first)?, z.select_rows(&second)?)
            } else {
                (z, z)
            });
        }
        let anchors = match anchor {
            Some(a) if loss_cfg.needs_anchor() => Some(a.embed_on(&tape, &v1)?),
            _ => None,
        };
        let contrast_batch = match views {
            Some((z1, z2)) if contrast => {
                let mut positives = if loss_cfg.cdc_enabled {
                    sample_positives_cdc(&y, &mut pos_rng)
                } else {
                    self_positives(n)
                };
                if loss_cfg.pma_enabled {
                    positives = mix_anchor_positives(&positives, loss_cfg.pma_probability, &mut pos_rng)?;
                }
                Some(ContrastBatch {
                    view1: z1,
                    view2: z2,
                    anchors,
                    labels: y.clone(),
                    domains: train.domain_ids(&local),
                    positives,
                })
            }
            _ => None,
        };
        let gen_inputs = match (&bound_gen, views, anchors) {
            (Some(g), Some((z1, _)), Some(z_pre)) => Some(GenerativeInputs {
                transformer: g,
                z: z1,
                z_pre,
                noise: standard_normal(&z1.shape(), &mut noise_rng),
            }),
            _ => None,
        };

        let (total, breakdown) = total_loss(logits, &y, contrast_batch.as_ref(), gen_inputs.as_ref(), &loss_cfg)?;
        if !breakdown.total.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = tape.backward(total)?;
        let model_grads = binder.gradients(&grads);
        if model_grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step });
        }
        opt.step(model.params_mut(), &model_grads);
        if let Some(g) = generative.as_mut() {
            gen_opt.step(g.params_mut(), &gen_binder.gradients(&grads));
        }
        if let Some(s) = &stats {
            model.update_running_stats(s);
        }
        losses.push(LossRecord { step, breakdown });
        logged.push(global);

        if step % cfg.optimizer.eval_every == 0 || step == cfg.optimizer.steps {
            let e = evaluate(&model, step)?;
            if e.val_accuracy >= best.0 {
                best = (e.val_accuracy, step, model.clone());
            }
            evals.push(e);
        }
    }

    let (best_val_accuracy, selected_step, selected) = best;
    let test_accuracy = if split.test.is_empty() {
        f64::NAN
    } else {
        selected.accuracy(&data.features(&split.test), &data.labels(&split.test))?
    };
    let connectivity_selected = feature_connectivity(&selected.encoder, data)?;
    Ok(RunOutput {
        result: RunResult {
            row: cfg.name.clone(),
            seed,
            held_out,
            test_accuracy,
            best_val_accuracy,
            selected_step,
            connectivity_init,
            connectivity_selected,
            heldout_in_batches,
            final_loss: losses.last().map(|l| l.breakdown).unwrap_or_default(),
            wall_clock_ms: started.elapsed().as_millis(),
        },
        model: selected,
        losses,
        batches: logged,
        evals,
    })
}

/// One leave-one-domain-out run holding out `held_out`.
pub fn train(
    cfg: &ExperimentConfig,
    data: &Dataset,
    held_out: usize,
    seed: u64,
    anchor: Option<&AnchorEncoder>,
) -> Result<RunOutput> {
    let split = split_for(data, Some(held_out), cfg.protocol.split_fraction, cfg.protocol.label_ratio, seed)?;
    fit(cfg, data, &split, Some(held_out), seed, anchor)
}

/// The anchor for `seed`, built on every domain of `data`, if the
/// configuration needs one.
pub fn anchor_for(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<Option<AnchorEncoder>> {
    if cfg.needs_anchor()? {
        Ok(Some(build_anchor(data, &cfg.model_config(), &cfg.anchor_config(), seed)?))
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooResult {
    pub row: String,
    pub seed: u64,
    /// Ordered by held-out domain.
    pub runs: Vec<RunResult>,
    pub average: f64,
}

fn average(runs: &[RunResult]) -> f64 {
    runs.iter().map(|r| r.test_accuracy).sum::<f64>() / runs.len() as f64
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))
}

/// Directory of one run.
pub fn run_dir(root: &Path, cfg: &ExperimentConfig, row: &str, seed: u64, held_out: usize) -> PathBuf {
    root.join(&cfg.name)
        .join(row)
        .join(format!("seed-{seed}"))
        .join(format!("heldout-{held_out}"))
}

/// Directory holding one anchor checkpoint per seed.
pub fn anchor_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join(&cfg.name).join("anchor")
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write a run's artifacts into `dir`, creating it.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, data: &Dataset, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    let mut loss = String::from(LossRecord::CSV_HEADER);
    loss.push('\n');
    for r in &out.losses {
        loss.push_str(&r.to_csv());
        loss.push('\n');
    }
    write(&dir.join("loss.csv"), &loss)?;
    let mut batches = String::new();
    for b in &out.batches {
        let line = b.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        batches.push_str(&line);
        batches.push('\n');
    }
    write(&dir.join("batches.log"), &batches)?;
    let mut evals = String::from("step,val_accuracy,intra_class_variance\n");
    for e in &out.evals {
        writeln!(evals, "{},{:.16e},{:.16e}", e.step, e.val_accuracy, e.intra_class_variance).unwrap();
    }
    write(&dir.join("eval.csv"), &evals)?;
    if cfg.output.save_checkpoints {
        Checkpoint::from_model(&out.model, out.result.seed, &data.content_hash()).save(&dir.join("checkpoint.txt"))?;
    }
    if cfg.output.dump_embeddings {
        write(
            &dir.join("embeddings.dump"),
            &collect_embeddings(&out.model.encoder, data, None)?.to_text(),
        )?;
    }
    write(&dir.join("result.txt"), &out.result.to_key_values())
}

/// Count batch entries in a `batches.log` that belong to `domain`.
pub fn audit_batch_log(path: &Path, data: &Dataset, domain: usize) -> Result<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut hits = 0;
    for (i, line) in text.lines().enumerate() {
        for tok in line.split(',').filter(|t| !t.is_empty()) {
            let idx: usize = tok.parse().map_err(|e| Error::Parse {
                what: "batch log",
                line: i + 1,
                reason: format!("`{tok}`: {e}"),
            })?;
            let s = data.samples.get(idx).ok_or_else(|| Error::Parse {
                what: "batch log",
                line: i + 1,
                reason: format!("index {idx} beyond the dataset"),
            })?;
            hits += usize::from(s.domain == domain);
        }
    }
    Ok(hits)
}

struct Job {
    row: usize,
    seed: usize,
    held_out: usize,
}

/// Run every `(row, seed, held-out domain)` combination, sharing one anchor
/// per seed, and write artifacts under `out_root` when given.
fn run_grid(
    base: &ExperimentConfig,
    rows: &[(String, ExperimentConfig)],
    data: &Dataset,
    domains: &[usize],
    out_root: Option<&Path>,
) -> Result<Vec<Vec<LooResult>>> {
    if data.present_domains().len() < 2 {
        return Err(Error::InvalidArgument("leave-one-domain-out needs at least 2 domains".into()));
    }
    for (_, cfg) in rows {
        cfg.validate()?;
    }
    let needs_anchor = rows.iter().map(|(_, c)| c.needs_anchor()).collect::<Result<Vec<_>>>()?;
    let pool = thread_pool(base.workers)?;
    let anchors: Vec<Option<AnchorEncoder>> = pool.install(|| {
        base.seeds
            .par_iter()
            .map(|&s| {
                if needs_anchor.iter().any(|&b| b) {
                    build_anchor(data, &base.model_config(), &base.anchor_config(), s).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let checksums: Vec<Option<String>> = anchors.iter().map(|a| a.as_ref().map(AnchorEncoder::checksum)).collect();
    if let Some(root) = out_root {
        for (a, seed) in anchors.iter().zip(&base.seeds) {
            if let Some(a) = a {
                let dir = anchor_dir(root, base);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                Checkpoint::from_anchor(a).save(&dir.join(format!("seed-{seed}.txt")))?;
            }
        }
    }

    let jobs: Vec<Job> = (0..rows.len())
        .flat_map(|row| {
            (0..base.seeds.len()).flat_map(move |seed| domains.iter().map(move |&held_out| Job { row, seed, held_out }))
        })
        .collect();
    let results: Vec<RunResult> = pool.install(|| {
        jobs.par_iter()
            .map(|j| {
                let (name, cfg) = &rows[j.row];
                let seed = base.seeds[j.seed];
                let anchor = anchors[j.seed].as_ref().filter(|_| needs_anchor[j.row]);
                let out = train(cfg, data, j.held_out, seed, anchor)?;
                if let Some(root) = out_root {
                    write_run(&run_dir(root, base, name, seed, j.held_out), cfg, data, &out)?;
                }
                Ok(out.result)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (a, c) in anchors.iter().zip(&checksums) {
        if a.as_ref().map(AnchorEncoder::checksum) != *c {
            return Err(Error::InvalidArgument("anchor parameters changed during training".into()));
        }
    }

    let mut it = results.into_iter();
    Ok(rows
        .iter()
        .map(|(name, _)| {
            base.seeds
                .iter()
                .map(|&seed| {
                    let runs: Vec<RunResult> = it.by_ref().take(domains.len()).collect();
                    LooResult {
                        row: name.clone(),
                        seed,
                        average: average(&runs),
                        runs,
                    }
                })
                .collect()
        })
        .collect())
}

/// Leave-one-domain-out for every seed of `cfg`.
pub fn leave_one_out(cfg: &ExperimentConfig, data: &Dataset, out_root: Option<&Path>) -> Result<Vec<LooResult>> {
    let rows = vec![(cfg.name.clone(), cfg.clone())];
    Ok(run_grid(cfg, &rows, data, &data.present_domains(), out_root)?.remove(0))
}

/// Flags, per-domain mean accuracy over seeds, and the seed-mean of the
/// leave-one-out average with its range.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub name: String,
    pub cdc: bool,
    pub pma: bool,
    pub gt: bool,
    pub self_contrast: bool,
    pub aggressive: bool,
    pub per_domain: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub seeds: Vec<LooResult>,
}

impl TableRow {
    fn new(name: &str, cfg: &ExperimentConfig, seeds: Vec<LooResult>) -> Self {
        let k = seeds.len() as f64;
        let domains = seeds[0].runs.len();
        let per_domain = (0..domains)
            .map(|d| seeds.iter().map(|s| s.runs[d].test_accuracy).sum::<f64>() / k)
            .collect();
        let avgs: Vec<f64> = seeds.iter().map(|s| s.average).collect();
        Self {
            name: name.to_string(),
            cdc: cfg.loss.cdc_enabled,
            pma: cfg.loss.pma_enabled,
            gt: cfg.loss.gt_enabled,
            self_contrast: cfg.loss.self_contrast_only,
            aggressive: cfg.loss.aggressive_augmentation,
            per_domain,
            mean: avgs.iter().sum::<f64>() / k,
            min: avgs.iter().copied().fold(f64::INFINITY, f64::min),
            max: avgs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub domains: Vec<usize>,
    pub rows: Vec<TableRow>,
}

impl ResultTable {
    pub fn row(&self, name: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Aligned columns, accuracies in percent.
    pub fn to_text(&self) -> String {
        let mark = |b: bool| if b { "✓" } else { "-" };
        let mut s = format!("{:<20} {:>3} {:>3} {:>3} {:>3} {:>3}", "row", "CDC", "PMA", "GT", "SC", "AGG");
        for d in &self.domains {
            write!(s, " {:>7}", format!("d{d}")).unwrap();
        }
        writeln!(s, " {:>7} {:>15}", "avg", "range").unwrap();
        for r in &self.rows {
            write!(
                s,
                "{:<20} {:>3} {:>3} {:>3} {:>3} {:>3}",
                r.name,
                mark(r.cdc),
                mark(r.pma),
                mark(r.gt),
                mark(r.self_contrast),
                mark(r.aggressive)
            )
            .unwrap();
            for a in &r.per_domain {
                write!(s, " {:>7.2}", 100.0 * a).unwrap();
            }
            writeln!(
                s,
                " {:>7.2} {:>15}",
                100.0 * r.mean,
                format!("[{:.2}, {:.2}]", 100.0 * r.min, 100.0 * r.max)
            )
            .unwrap();
        }
        s
    }

    /// Comma-separated, accuracies as fractions.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,cdc,pma,gt,self_contrast,aggressive");
        for d in &self.domains {
            write!(s, ",d{d}").unwrap();
        }
        s.push_str(",avg,min,max\n");
        for r in &self.rows {
            write!(
                s,
                "{},{},{},{},{},{}",
                r.name,
                u8::from(r.cdc),
                u8::from(r.pma),
                u8::from(r.gt),
                u8::from(r.self_contrast),
                u8::from(r.aggressive)
            )
            .unwrap();
            for a in &r.per_domain {
                write!(s, ",{a:.6}").unwrap();
            }
            writeln!(s, ",{:.6},{:.6},{:.6}", r.mean, r.min, r.max).unwrap();
        }
        s
    }
}

/// Leave-one-out table with a single row for `cfg`.
pub fn loo_table(cfg: &ExperimentConfig, data: &Dataset, out_root: Option<&Path>) -> Result<ResultTable> {
    let seeds = leave_one_out(cfg, data, out_root)?;
    Ok(ResultTable {
        domains: data.present_domains(),
        rows: vec![TableRow::new(&cfg.name, cfg, seeds)],
    })
}

/// One run per seed holding out `protocol.held_out`.
pub fn train_table(cfg: &ExperimentConfig, data: &Dataset, out_root: Option<&Path>) -> Result<ResultTable> {
    let held_out = [cfg.protocol.held_out];
    let rows = vec![(cfg.name.clone(), cfg.clone())];
    let seeds = run_grid(cfg, &rows, data, &held_out, out_root)?.remove(0);
    Ok(ResultTable {
        domains: held_out.to_vec(),
        rows: vec![TableRow::new(&cfg.name, cfg, seeds)],
    })
}

/// The configured ablation rows over every seed and held-out domain.
pub fn ablation_grid(base: &ExperimentConfig, data: &Dataset, out_root: Option<&Path>) -> Result<ResultTable> {
    let rows = base
        .ablation
        .rows
        .iter()
        .map(|name| {
            let row: AblationRow = name.parse()?;
            Ok((name.clone(), row.apply(base)))
        })
        .collect::<Result<Vec<_>>>()?;
    let results = run_grid(base, &rows, data, &data.present_domains(), out_root)?;
    Ok(ResultTable {
        domains: data.present_domains(),
        rows: rows
            .iter()
            .zip(results)
            .map(|((name, cfg), seeds)| TableRow::new(name, cfg, seeds))
            .collect(),
    })
}

/// Mean per-class connectivity of the anchor trained on every domain and of
/// a randomly initialised model trained with plain cross-entropy on the
/// source domains only, both measured on all of `data`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorContrast {
    pub seed: u64,
    pub anchor_score: f64,
    pub erm_score: f64,
}

pub fn anchor_contrast(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<AnchorContrast> {
    let anchor = build_anchor(data, &cfg.model_config(), &cfg.anchor_config(), seed)?;
    let mut erm = AblationRow::Erm.apply(cfg);
    erm.protocol.init_from_anchor = false;
    let run = train(&erm, data, cfg.protocol.held_out, seed, None)?;
    let undefined = || Error::Degenerate {
        op: "anchor_contrast",
        detail: "no class has a defined connectivity score".into(),
    };
    Ok(AnchorContrast {
        seed,
        anchor_score: feature_connectivity(anchor.encoder(), data)?.ok_or_else(undefined)?,
        erm_score: feature_connectivity(&run.model.encoder, data)?.ok_or_else(undefined)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{gen_rotated_gaussians, RotatedGaussians};

    fn small() -> (ExperimentConfig, Dataset) {
        let mut cfg = ExperimentConfig::default();
        cfg.optimizer.steps = 40;
        cfg.optimizer.eval_every = 10;
        cfg.anchor.steps = 40;
        cfg.dataset.per_domain_class = 10;
        cfg.seeds = vec![0];
        let data = cfg.dataset.generate().unwrap();
        (cfg, data)
    }

    #[test]
    fn rows_follow_the_ablation_layout() {
        assert_eq!(AblationRow::ALL.len(), 10);
        assert!(AblationRow::Full.aggressive());
        assert!(!AblationRow::FullNoAggressive.aggressive());
        assert!(!AblationRow::PmaGt.aggressive());
        let base = ExperimentConfig::default();
        let sc = AblationRow::SelfContrast.apply(&base);
        assert!(sc.loss.self_contrast_only && !sc.loss.cdc_enabled);
        for r in AblationRow::ALL {
            assert_eq!(r.name().parse::<AblationRow>().unwrap(), r);
            r.apply(&base).validate().unwrap();
        }
    }

    #[test]
    fn split_respects_held_out_and_ratio() {
        let data = gen_rotated_gaussians(&RotatedGaussians {
            per_domain_class: 10,
            ..Default::default()
        })
        .unwrap();
        let s = split_for(&data, Some(2), 0.8, 1.0, 0).unwrap();
        assert!(s.train.iter().chain(&s.val).all(|&i| data.samples[i].domain != 2));
        assert!(s.test.iter().all(|&i| data.samples[i].domain == 2));
        assert_eq!(s.train.len() + s.val.len(), 90);
        let r = split_for(&data, Some(2), 0.8, 0.25, 0).unwrap();
        assert_eq!(r.train.len(), (0.25 * s.train.len() as f64).ceil() as usize);
    }

    #[test]
    fn intra_class_variance_by_hand() {
        let z = Tensor::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![5.0, 5.0]]).unwrap();
        assert!((intra_class_variance(&z, &[0, 0, 1]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn erm_run_is_reproducible_and_clean() {
        let (cfg, data) = small();
        let anchor = anchor_for(&cfg, &data, 0).unwrap();
        let a = train(&cfg, &data, 1, 0, anchor.as_ref()).unwrap();
        let b = train(&cfg, &data, 1, 0, anchor.as_ref()).unwrap();
        assert_eq!(a.result.heldout_in_batches, 0);
        assert_eq!(a.result.to_key_values(), b.result.to_key_values());
        assert_eq!(a.model, b.model);
        assert!((0.0..=1.0).contains(&a.result.test_accuracy));
        let best = a.evals.iter().map(|e| e.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best, a.result.best_val_accuracy);
    }

    #[test]
    fn full_row_trains_and_leaves_anchor_untouched() {
        let (cfg, data) = small();
        let cfg = AblationRow::Full.apply(&cfg);
        let anchor = anchor_for(&cfg, &data, 0).unwrap().unwrap();
        let before = anchor.checksum();
        let out = train(&cfg, &data, 0, 0, Some(&anchor)).unwrap();
        assert_eq!(anchor.checksum(), before);
        assert!(out.losses.iter().all(|l| l.breakdown.contrast != 0.0 && l.breakdown.gen != 0.0));
    }

    #[test]
    fn missing_anchor_is_rejected() {
        let (cfg, data) = small();
        let cfg = AblationRow::Pma.apply(&cfg);
        assert!(train(&cfg, &data, 0, 0, None).is_err());
    }
}
