//! Synthetic multi-domain datasets, augmentation and domain-balanced batching.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub class: usize,
    pub domain: usize,
}

/// Generator name, parameters and seed, recorded in dumps and checkpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeneratorInfo {
    pub name: String,
    pub params: Vec<(String, String)>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub dim: usize,
    pub classes: usize,
    pub domains: usize,
    pub generator: GeneratorInfo,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self, idx: &[usize]) -> Tensor {
        let data = idx.iter().flat_map(|&i| self.samples[i].x.iter().copied()).collect();
        Tensor::matrix(idx.len(), self.dim, data).expect("non-empty selection")
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.samples[i].class).collect()
    }

    pub fn domain_ids(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.samples[i].domain).collect()
    }

    pub fn features_all(&self) -> Tensor {
        self.features(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn labels_all(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class).collect()
    }

    /// Distinct domain ids present, ascending.
    pub fn present_domains(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| s.domain)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Same metadata, only the selected samples.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.without_samples()
        }
    }

    pub fn filter(&self, keep: impl Fn(&LabeledSample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            ..self.without_samples()
        }
    }

    fn without_samples(&self) -> Dataset {
        Dataset {
            samples: Vec::new(),
            dim: self.dim,
            classes: self.classes,
            domains: self.domains,
            generator: self.generator.clone(),
        }
    }

    /// Shuffle each domain separately and cut it at `fraction`; returns
    /// `(first, second)` index lists, each ascending.
    pub fn split_per_domain(&self, fraction: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
        let mut first = Vec::new();
        let mut second = Vec::new();
        for d in self.present_domains() {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.samples[i].domain == d).collect();
            idx.shuffle(rng);
            let cut = ((idx.len() as f64) * fraction).round() as usize;
            let cut = cut.clamp(1.min(idx.len()), idx.len());
            first.extend_from_slice(&idx[..cut]);
            second.extend_from_slice(&idx[cut..]);
        }
        first.sort_unstable();
        second.sort_unstable();
        (first, second)
    }

    /// SHA-256 of the canonical textual dump.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_dump().as_bytes()))
    }

    /// Line-oriented dump: a header with shape and generator, then
    /// `domain,class,x1,...,xD` per sample with 17 significant digits.
    pub fn to_dump(&self) -> String {
        let params = self
            .generator
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        let mut out = format!(
            "# dccl-data v1 domains={} classes={} dim={} seed={} generator={} params={}\n",
            self.domains, self.classes, self.dim, self.generator.seed, self.generator.name, params
        );
        for s in &self.samples {
            write!(out, "{},{}", s.domain, s.class).unwrap();
            for v in &s.x {
                write!(out, ",{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_dump(text: &str) -> Result<Dataset> {
        let perr = |line: usize, reason: String| Error::Parse {
            what: "dataset dump",
            line,
            reason,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
        let rest = header
            .strip_prefix("# dccl-data v1 ")
            .ok_or_else(|| perr(1, "missing `# dccl-data v1` header".into()))?;
        let mut fields = std::collections::HashMap::new();
        for tok in rest.split(' ') {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| perr(1, format!("malformed header field `{tok}`")))?;
            fields.insert(k, v);
        }
        let num = |k: &str| -> Result<usize> {
            fields
                .get(k)
                .ok_or_else(|| perr(1, format!("header lacks `{k}`")))?
                .parse()
                .map_err(|e| perr(1, format!("`{k}`: {e}")))
        };
        let (domains, classes, dim) = (num("domains")?, num("classes")?, num("dim")?);
        let seed = fields
            .get("seed")
            .ok_or_else(|| perr(1, "header lacks `seed`".into()))?
            .parse()
            .map_err(|e| perr(1, format!("`seed`: {e}")))?;
        let name = fields.get("generator").copied().unwrap_or("").to_string();
        let params = fields
            .get("params")
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.split(';')
                    .filter_map(|kv| kv.split_once('='))
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect()
            })
            .unwrap_or_default();

        let mut samples = Vec::new();
        for (i, line) in lines {
            let ln = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != dim + 2 {
                return Err(perr(ln, format!("expected {} fields, found {}", dim + 2, parts.len())));
            }
            let domain: usize = parts[0].parse().map_err(|e| perr(ln, format!("domain: {e}")))?;
            let class: usize = parts[1].parse().map_err(|e| perr(ln, format!("class: {e}")))?;
            if domain >= domains || class >= classes {
                return Err(perr(ln, format!("domain {domain} / class {class} out of range")));
            }
            let x = parts[2..]
                .iter()
                .map(|p| p.parse::<f64>().map_err(|e| perr(ln, format!("value `{p}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            samples.push(LabeledSample { x, class, domain });
        }
        Ok(Dataset {
            samples,
            dim,
            classes,
            domains,
            generator: GeneratorInfo { name, params, seed },
        })
    }
}

/// `sgn(v) = 1{v >= 0} - 1{v < 0}`; zero maps to `+1`.
pub fn sgn(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Class id of the two-class toy example: `-1 -> 0`, `+1 -> 1`.
pub fn toy_class(label: f64) -> usize {
    usize::from(label >= 0.0)
}

pub fn toy_label(class: usize) -> f64 {
    if class == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Two-domain, two-class linearly separable toy example.
///
/// In the first domain `X1 ~ U[1.25, 1.75) * Y` and `X2 ~ U[0.25, 0.75) * Y`,
/// independently given `Y`; the second domain swaps the two coordinate
/// distributions. Classes are balanced. `domain` is `1` or `2`; the sample's
/// domain id is `domain - 1`.
pub fn gen_toy(n_per_class: usize, domain: usize, seed: u64) -> Result<Dataset> {
    if !(domain == 1 || domain == 2) {
        return Err(Error::InvalidArgument(format!("toy domain must be 1 or 2, got {domain}")));
    }
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be at least 1".into()));
    }
    let mut r = rng::seeded(seed);
    let mut samples = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        let y = toy_label(class);
        for _ in 0..n_per_class {
            let wide = r.gen_range(1.25..1.75) * y;
            let narrow = r.gen_range(0.25..0.75) * y;
            let x = if domain == 1 { vec![wide, narrow] } else { vec![narrow, wide] };
            samples.push(LabeledSample {
                x,
                class,
                domain: domain - 1,
            });
        }
    }
    Ok(Dataset {
        samples,
        dim: 2,
        classes: 2,
        domains: 2,
        generator: GeneratorInfo {
            name: "toy".into(),
            params: vec![
                ("n_per_class".into(), n_per_class.to_string()),
                ("domain".into(), domain.to_string()),
            ],
            seed,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyMapKind {
    Weak,
    Aggressive,
}

impl std::str::FromStr for ToyMapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Self::Weak),
            "aggressive" => Ok(Self::Aggressive),
            other => Err(Error::InvalidArgument(format!(
                "unknown toy variant `{other}` (expected weak or aggressive)"
            ))),
        }
    }
}

impl std::fmt::Display for ToyMapKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Weak => "weak",
            Self::Aggressive => "aggressive",
        })
    }
}

/// Angle of the optimal toy embedding.
///
/// Weak: `theta = (x1 - sgn(y)) * pi`. Aggressive: `theta = (sgn(x1) + y) * pi / 3`.
/// Both take the training label `y` in `{-1, +1}`.
pub fn toy_angle(kind: ToyMapKind, x: &[f64], y: f64) -> f64 {
    match kind {
        ToyMapKind::Weak => (x[0] - sgn(y)) * PI,
        ToyMapKind::Aggressive => (sgn(x[0]) + y) * PI / 3.0,
    }
}

/// `(cos theta, sin theta)` on the unit circle.
pub fn toy_optimal_map(kind: ToyMapKind, x: &[f64], y: f64) -> [f64; 2] {
    let t = toy_angle(kind, x, y);
    [t.cos(), t.sin()]
}

/// Predicts `sgn` of the second embedding coordinate.
pub fn sign_classifier(z: &[f64; 2]) -> f64 {
    sgn(z[1])
}

/// Accuracy of the sign classifier on the toy map applied to `data`.
pub fn toy_accuracy(kind: ToyMapKind, data: &Dataset) -> f64 {
    let hits = data
        .samples
        .iter()
        .filter(|s| {
            let y = toy_label(s.class);
            sign_classifier(&toy_optimal_map(kind, &s.x, y)) == y
        })
        .count();
    hits as f64 / data.len() as f64
}

/// Class means on a circle, rotated per domain.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedGaussians {
    pub domains: usize,
    pub classes: usize,
    pub per_domain_class: usize,
    pub rotation_step: f64,
    pub class_separation: f64,
    pub noise_std: f64,
    /// Ambient dimension; the circle lies in the first two coordinates.
    pub dim: usize,
    pub seed: u64,
}

impl Default for RotatedGaussians {
    fn default() -> Self {
        Self {
            domains: 4,
            classes: 3,
            per_domain_class: 60,
            rotation_step: 0.35,
            class_separation: 3.0,
            noise_std: 0.3,
            dim: 2,
            seed: 0,
        }
    }
}

/// Class `k` in domain `m` is centred at angle `2*pi*k/C + m*step` on a
/// circle of radius `class_separation`, with isotropic Gaussian noise.
pub fn gen_rotated_gaussians(g: &RotatedGaussians) -> Result<Dataset> {
    if g.domains < 2 || g.classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 domains and 2 classes, got {} and {}",
            g.domains, g.classes
        )));
    }
    if g.per_domain_class == 0 {
        return Err(Error::InvalidArgument("per_domain_class must be positive".into()));
    }
    if g.dim < 2 {
        return Err(Error::InvalidArgument("dim must be at least 2".into()));
    }
    if !(g.noise_std >= 0.0) || !(g.class_separation > 0.0) {
        return Err(Error::InvalidArgument(
            "noise_std must be non-negative and class_separation positive".into(),
        ));
    }
    let mut r = rng::seeded(g.seed);
    let noise = Normal::new(0.0, g.noise_std).expect("finite std");
    let mut samples = Vec::with_capacity(g.domains * g.classes * g.per_domain_class);
    for m in 0..g.domains {
        for k in 0..g.classes {
            let angle = 2.0 * PI * k as f64 / g.classes as f64 + m as f64 * g.rotation_step;
            let mut mean = vec![0.0; g.dim];
            mean[0] = g.class_separation * angle.cos();
            mean[1] = g.class_separation * angle.sin();
            for _ in 0..g.per_domain_class {
                let x = mean.iter().map(|&c| c + noise.sample(&mut r)).collect();
                samples.push(LabeledSample {
                    x,
                    class: k,
                    domain: m,
                });
            }
        }
    }
    Ok(Dataset {
        samples,
        dim: g.dim,
        classes: g.classes,
        domains: g.domains,
        generator: GeneratorInfo {
            name: "rotated-gaussians".into(),
            params: vec![
                ("per_domain_class".into(), g.per_domain_class.to_string()),
                ("rotation_step".into(), g.rotation_step.to_string()),
                ("class_separation".into(), g.class_separation.to_string()),
                ("noise_std".into(), g.noise_std.to_string()),
            ],
            seed: g.seed,
        },
    })
}

/// Random augmentation map. Intensity zero is the identity.
#[derive(Debug, Clone, PartialEq)]
pub enum Augmentation {
    /// `x_j + u_j`, `u_j ~ U(-a, a)`
    AdditiveUniform(f64),
    /// `x_j * s_j`, `s_j ~ U(1 - a, 1 + a)`
    CoordinateScaling(f64),
    /// Applied left to right.
    Compose(Vec<Augmentation>),
}

impl Augmentation {
    pub fn none() -> Self {
        Self::AdditiveUniform(0.0)
    }

    pub fn apply(&self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        match self {
            Self::AdditiveUniform(a) if *a > 0.0 => {
                x.iter().map(|&v| v + rng.gen_range(-a..=*a)).collect()
            }
            Self::CoordinateScaling(a) if *a > 0.0 => {
                x.iter().map(|&v| v * rng.gen_range(1.0 - a..=1.0 + a)).collect()
            }
            Self::Compose(parts) => parts.iter().fold(x.to_vec(), |acc, p| p.apply(&acc, rng)),
            _ => x.to_vec(),
        }
    }

    /// Augment every row of `x`.
    pub fn apply_rows(&self, x: &Tensor, rng: &mut Rng) -> Tensor {
        let mut data = Vec::with_capacity(x.len());
        for i in 0..x.rows() {
            data.extend(self.apply(x.row(i), rng));
        }
        Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
    }
}

/// Infinite stream of index batches with an equal share from every domain
/// present in the dataset. Each domain is visited in a fresh permutation
/// per epoch.
#[derive(Debug, Clone)]
pub struct BatchStream {
    per_domain: usize,
    pools: Vec<DomainPool>,
    rng: Rng,
}

#[derive(Debug, Clone)]
struct DomainPool {
    domain: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchStream {
    pub fn per_domain(&self) -> usize {
        self.per_domain
    }

    pub fn domains(&self) -> Vec<usize> {
        self.pools.iter().map(|p| p.domain).collect()
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.per_domain * self.pools.len());
        for pool in &mut self.pools {
            for _ in 0..self.per_domain {
                if pool.cursor == pool.order.len() {
                    pool.order.shuffle(&mut self.rng);
                    pool.cursor = 0;
                }
                batch.push(pool.order[pool.cursor]);
                pool.cursor += 1;
            }
        }
        batch
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

pub fn make_batches(data: &Dataset, batch_size: usize, seed: u64) -> Result<BatchStream> {
    let domains = data.present_domains();
    let m = domains.len();
    if m == 0 {
        return Err(Error::InvalidArgument("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 || batch_size % m != 0 {
        let below = (batch_size / m * m).max(m);
        let above = (batch_size / m + 1) * m;
        return Err(Error::IndivisibleBatch {
            batch_size,
            domains: m,
            below,
            above,
        });
    }
    let mut rng = rng::stream(seed, "batches");
    let pools = domains
        .into_iter()
        .map(|d| {
            let mut order: Vec<usize> = (0..data.len()).filter(|&i| data.samples[i].domain == d).collect();
            order.shuffle(&mut rng);
            DomainPool {
                domain: d,
                order,
                cursor: 0,
            }
        })
        .collect();
    Ok(BatchStream {
        per_domain: batch_size / m,
        pools,
        rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_support_per_domain_and_label() {
        let d1 = gen_toy(500, 1, 1).unwrap();
        for s in &d1.samples {
            let y = toy_label(s.class);
            let (a, b) = (s.x[0] * y, s.x[1] * y);
            assert!((1.25..1.75).contains(&a) && (0.25..0.75).contains(&b), "{s:?}");
        }
        let d2 = gen_toy(500, 2, 1).unwrap();
        for s in d2.samples.iter().filter(|s| s.class == 0) {
            assert!(s.x[0] > -0.75 && s.x[0] <= -0.25, "{s:?}");
        }
    }

    #[test]
    fn toy_is_balanced_and_seeded() {
        let a = gen_toy(7, 1, 3).unwrap();
        assert_eq!(a.samples.iter().filter(|s| s.class == 1).count(), 7);
        assert_eq!(a, gen_toy(7, 1, 3).unwrap());
        assert!(gen_toy(7, 3, 3).is_err());
    }

    #[test]
    fn weak_map_hand_value() {
        let z = toy_optimal_map(ToyMapKind::Weak, &[1.5, 0.5], 1.0);
        assert!(z[0].abs() < 1e-15 && (z[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sgn_of_zero_is_positive() {
        assert_eq!(sgn(0.0), 1.0);
        let z = toy_optimal_map(ToyMapKind::Aggressive, &[0.0, 1.0], 1.0);
        assert!((toy_angle(ToyMapKind::Aggressive, &[0.0, 1.0], 1.0) - 2.0 * PI / 3.0).abs() < 1e-15);
        assert!((z[0] * z[0] + z[1] * z[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn toy_accuracies_are_exact() {
        let d1 = gen_toy(200, 1, 5).unwrap();
        let d2 = gen_toy(200, 2, 5).unwrap();
        assert_eq!(toy_accuracy(ToyMapKind::Weak, &d1), 1.0);
        assert_eq!(toy_accuracy(ToyMapKind::Weak, &d2), 0.0);
        assert_eq!(toy_accuracy(ToyMapKind::Aggressive, &d1), 1.0);
        assert_eq!(toy_accuracy(ToyMapKind::Aggressive, &d2), 1.0);
    }

    #[test]
    fn rotated_gaussians_validates() {
        let bad = RotatedGaussians {
            domains: 1,
            ..Default::default()
        };
        assert!(gen_rotated_gaussians(&bad).is_err());
        let bad = RotatedGaussians {
            per_domain_class: 0,
            ..Default::default()
        };
        assert!(gen_rotated_gaussians(&bad).is_err());
    }

    #[test]
    fn zero_rotation_gives_identical_domain_means() {
        let g = RotatedGaussians {
            rotation_step: 0.0,
            noise_std: 0.0,
            ..Default::default()
        };
        let d = gen_rotated_gaussians(&g).unwrap();
        let first: Vec<_> = d.samples.iter().filter(|s| s.domain == 0).map(|s| s.x.clone()).collect();
        let last: Vec<_> = d.samples.iter().filter(|s| s.domain == 3).map(|s| s.x.clone()).collect();
        assert_eq!(first, last);
    }

    #[test]
    fn intensity_zero_is_bit_exact_identity() {
        let x = [-0.0, 1.5, f64::MIN_POSITIVE];
        let mut r = rng::seeded(0);
        for aug in [
            Augmentation::AdditiveUniform(0.0),
            Augmentation::CoordinateScaling(0.0),
            Augmentation::Compose(vec![]),
        ] {
            let y = aug.apply(&x, &mut r);
            assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn additive_jitter_statistics() {
        let mut r = rng::seeded(11);
        let aug = Augmentation::AdditiveUniform(0.5);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let d = aug.apply(&[2.0], &mut r)[0] - 2.0;
            assert!((-0.5..=0.5).contains(&d));
            sum += d;
        }
        assert!((sum / n as f64).abs() < 0.01);
    }

    #[test]
    fn composed_jitter_stays_in_interval_bounds() {
        let mut r = rng::seeded(2);
        let aug = Augmentation::Compose(vec![
            Augmentation::AdditiveUniform(0.2),
            Augmentation::CoordinateScaling(0.1),
        ]);
        for _ in 0..10_000 {
            for v in aug.apply(&[1.0, 1.0], &mut r) {
                assert!((0.8 * 0.9..=1.2 * 1.1).contains(&v), "{v}");
            }
        }
    }

    fn three_domain_set() -> Dataset {
        let g = RotatedGaussians {
            domains: 3,
            per_domain_class: 10,
            ..Default::default()
        };
        gen_rotated_gaussians(&g).unwrap()
    }

    #[test]
    fn batches_are_domain_balanced() {
        let d = three_domain_set();
        let mut s = make_batches(&d, 12, 0).unwrap();
        for _ in 0..50 {
            let b = s.next_batch();
            for m in 0..3 {
                assert_eq!(b.iter().filter(|&&i| d.samples[i].domain == m).count(), 4);
            }
        }
    }

    #[test]
    fn indivisible_batch_suggests_neighbours() {
        let d = three_domain_set();
        match make_batches(&d, 10, 0) {
            Err(Error::IndivisibleBatch { below, above, .. }) => assert_eq!((below, above), (9, 12)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn epoch_covers_each_sample_once_per_domain() {
        let d = three_domain_set();
        let mut s = make_batches(&d, 6, 9).unwrap();
        // 30 samples per domain, 2 per batch => 15 batches per epoch
        let mut seen: Vec<usize> = (0..15).flat_map(|_| s.next_batch()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..d.len()).collect::<Vec<_>>());
    }

    #[test]
    fn batch_stream_replays() {
        let d = three_domain_set();
        let a: Vec<_> = make_batches(&d, 12, 4).unwrap().take(20).collect();
        let b: Vec<_> = make_batches(&d, 12, 4).unwrap().take(20).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn dump_parse_errors_carry_line_numbers() {
        let d = gen_toy(2, 1, 0).unwrap();
        let mut text = d.to_dump();
        text.push_str("0,1,oops,2\n");
        match Dataset::from_dump(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
    }
}
