//! Intra-class connectivity of an embedding: for the points of each class,
//! the smallest distance threshold `tau` that connects the proximity graph,
//! scored against the mean `mu` and population standard deviation `sigma`
//! of all pairwise distances as `(tau - mu) / sigma`. Lower is better
//! connected.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: usize,
    pub domain: usize,
    pub class: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDump {
    pub dim: usize,
    pub classes: usize,
    pub domains: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingDump {
    pub fn header(&self) -> String {
        format!(
            "# dccl-dump v1 dim={} classes={} domains={}",
            self.dim, self.classes, self.domains
        )
    }

    /// Header line, then `id,domain,class,v1,...,vd` with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.records {
            write!(out, "{},{},{}", r.id, r.domain, r.class).unwrap();
            for v in &r.vector {
                write!(out, ",{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let perr = |line: usize, reason: String| Error::Parse {
            what: "embedding dump",
            line,
            reason,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty dump".into()))?;
        let rest = header
            .strip_prefix("# dccl-dump v1 ")
            .ok_or_else(|| perr(1, "expected `# dccl-dump v1 dim=<d> classes=<C> domains=<M>`".into()))?;
        let mut dims = [None; 3];
        for tok in rest.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| perr(1, format!("malformed header field `{tok}`")))?;
            let slot = match k {
                "dim" => 0,
                "classes" => 1,
                "domains" => 2,
                _ => return Err(perr(1, format!("unknown header field `{k}`"))),
            };
            dims[slot] = Some(v.parse::<usize>().map_err(|e| perr(1, format!("`{k}`: {e}")))?);
        }
        let [Some(dim), Some(classes), Some(domains)] = dims else {
            return Err(perr(1, "header needs dim, classes and domains".into()));
        };

        let mut records = Vec::new();
        for (i, line) in lines {
            let ln = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 3 {
                return Err(perr(ln, format!("expected {} fields, found {}", dim + 3, fields.len())));
            }
            let int = |s: &str, name: &str| -> Result<usize> {
                s.trim().parse().map_err(|e| perr(ln, format!("{name} `{s}`: {e}")))
            };
            let id = int(fields[0], "id")?;
            let domain = int(fields[1], "domain")?;
            let class = int(fields[2], "class")?;
            if domain >= domains {
                return Err(perr(ln, format!("domain {domain} outside [0, {domains})")));
            }
            if class >= classes {
                return Err(perr(ln, format!("class {class} outside [0, {classes})")));
            }
            let vector = fields[3..]
                .iter()
                .map(|s| {
                    let v: f64 = s.trim().parse().map_err(|e| perr(ln, format!("value `{s}`: {e}")))?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(perr(ln, format!("non-finite value `{s}`")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(EmbeddingRecord {
                id,
                domain,
                class,
                vector,
            });
        }
        Ok(Self {
            dim,
            classes,
            domains,
            records,
        })
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// All `k(k-1)/2` Euclidean distances, in `(i, j), i < j` order.
pub fn pairwise_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let k = points.len();
    let mut out = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            out.push(dist(&points[i], &points[j]));
        }
    }
    out
}

/// Mean and population standard deviation of the pairwise distances, or
/// `None` for fewer than two points.
pub fn pairwise_stats(points: &[Vec<f64>]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let d = pairwise_distances(points);
    let n = d.len() as f64;
    let mu = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    Some((mu, var.sqrt()))
}

/// Longest edge of the Euclidean minimum spanning tree, which is the smallest
/// `t` for which joining points at distance `<= t` connects them all.
/// `None` for fewer than two points.
pub fn connecting_threshold(points: &[Vec<f64>]) -> Option<f64> {
    let k = points.len();
    if k < 2 {
        return None;
    }
    let mut in_tree = vec![false; k];
    let mut best = vec![f64::INFINITY; k];
    in_tree[0] = true;
    for j in 1..k {
        best[j] = dist(&points[0], &points[j]);
    }
    let mut tau: f64 = 0.0;
    for _ in 1..k {
        let next = (0..k)
            .filter(|&j| !in_tree[j])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]))
            .expect("a vertex remains");
        tau = tau.max(best[next]);
        in_tree[next] = true;
        for j in 0..k {
            if !in_tree[j] {
                best[j] = best[j].min(dist(&points[next], &points[j]));
            }
        }
    }
    Some(tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    pub tau: f64,
    pub mu: f64,
    pub sigma: f64,
    /// `None` when `sigma == 0`.
    pub score: Option<f64>,
}

pub fn class_stats(points: &[Vec<f64>]) -> Option<ClassStats> {
    let tau = connecting_threshold(points)?;
    let (mu, sigma) = pairwise_stats(points)?;
    let score = (sigma > 0.0).then(|| (tau - mu) / sigma);
    Some(ClassStats { tau, mu, sigma, score })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// All domains of a class form one graph.
    #[default]
    Pooled,
    /// One graph per (class, domain).
    PerDomain,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Self::Pooled),
            "per-domain" => Ok(Self::PerDomain),
            other => Err(Error::InvalidArgument(format!(
                "unknown connectivity mode `{other}` (expected pooled or per-domain)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pooled => "pooled",
            Self::PerDomain => "per-domain",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub class: usize,
    /// Set in per-domain mode.
    pub domain: Option<usize>,
    pub nodes: usize,
    /// `None` for groups with fewer than two nodes.
    pub stats: Option<ClassStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityReport {
    pub mode: Mode,
    pub groups: Vec<GroupReport>,
    /// Over groups with a defined score; `None` if there are none.
    pub mean_score: Option<f64>,
    pub max_score: Option<f64>,
}

/// Per-class (or per class and domain) connectivity over a dump, ordered by
/// class id and then domain id. Only groups that have at least one record
/// are reported.
pub fn connectivity_report(records: &[EmbeddingRecord], mode: Mode) -> Result<ConnectivityReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("embedding dump has no records".into()));
    }
    let dim = records[0].vector.len();
    if let Some(bad) = records.iter().find(|r| r.vector.len() != dim) {
        return Err(Error::InvalidArgument(format!(
            "record {} has dimension {}, expected {dim}",
            bad.id,
            bad.vector.len()
        )));
    }
    let mut keys: Vec<(usize, Option<usize>)> = records
        .iter()
        .map(|r| match mode {
            Mode::Pooled => (r.class, None),
            Mode::PerDomain => (r.class, Some(r.domain)),
        })
        .collect();
    keys.sort_unstable();
    keys.dedup();

    let groups: Vec<GroupReport> = keys
        .into_par_iter()
        .map(|(class, domain)| {
            let points: Vec<Vec<f64>> = records
                .iter()
                .filter(|r| r.class == class && domain.map_or(true, |d| r.domain == d))
                .map(|r| r.vector.clone())
                .collect();
            GroupReport {
                class,
                domain,
                nodes: points.len(),
                stats: class_stats(&points),
            }
        })
        .collect();

    let scores: Vec<f64> = groups.iter().filter_map(|g| g.stats.and_then(|s| s.score)).collect();
    let mean_score = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    let max_score = scores.iter().copied().reduce(f64::max);
    Ok(ConnectivityReport {
        mode,
        groups,
        mean_score,
        max_score,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.16e}"))
}

impl ConnectivityReport {
    fn group_key(g: &GroupReport) -> String {
        match g.domain {
            Some(d) => format!("class.{}.domain.{d}", g.class),
            None => format!("class.{}", g.class),
        }
    }

    /// `key = value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = format!("mode = {}\ngroups = {}\n", self.mode, self.groups.len());
        for g in &self.groups {
            let k = Self::group_key(g);
            writeln!(out, "{k}.nodes = {}", g.nodes).unwrap();
            let s = g.stats;
            writeln!(out, "{k}.tau = {}", fmt_opt(s.map(|s| s.tau))).unwrap();
            writeln!(out, "{k}.mu = {}", fmt_opt(s.map(|s| s.mu))).unwrap();
            writeln!(out, "{k}.sigma = {}", fmt_opt(s.map(|s| s.sigma))).unwrap();
            writeln!(out, "{k}.score = {}", fmt_opt(s.and_then(|s| s.score))).unwrap();
        }
        writeln!(out, "mean_score = {}", fmt_opt(self.mean_score)).unwrap();
        writeln!(out, "max_score = {}", fmt_opt(self.max_score)).unwrap();
        out
    }

    /// Comma-separated table, one row per group plus `mean` and `max` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,domain,nodes,tau,mu,sigma,score\n");
        for g in &self.groups {
            let s = g.stats;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                g.class,
                g.domain.map_or("all".to_string(), |d| d.to_string()),
                g.nodes,
                fmt_opt(s.map(|s| s.tau)),
                fmt_opt(s.map(|s| s.mu)),
                fmt_opt(s.map(|s| s.sigma)),
                fmt_opt(s.and_then(|s| s.score)),
            )
            .unwrap();
        }
        writeln!(out, "mean,,,,,,{}", fmt_opt(self.mean_score)).unwrap();
        writeln!(out, "max,,,,,,{}", fmt_opt(self.max_score)).unwrap();
        out
    }

    /// Aligned columns for a terminal.
    pub fn to_table(&self) -> String {
        let short = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"));
        let mut out = format!(
            "{:>6} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10}\n",
            "class", "domain", "nodes", "tau", "mu", "sigma", "score"
        );
        for g in &self.groups {
            let s = g.stats;
            writeln!(
                out,
                "{:>6} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10}",
                g.class,
                g.domain.map_or("all".to_string(), |d| d.to_string()),
                g.nodes,
                short(s.map(|s| s.tau)),
                short(s.map(|s| s.mu)),
                short(s.map(|s| s.sigma)),
                short(s.and_then(|s| s.score)),
            )
            .unwrap();
        }
        writeln!(out, "mean score {}  max score {}", short(self.mean_score), short(self.max_score)).unwrap();
        out
    }
}
