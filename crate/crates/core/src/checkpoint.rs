//! Textual model checkpoints.
//!
//! ```text
//! dccl-checkpoint v1
//! kind model
//! seed 0
//! data_hash <hex>
//! encoder_widths 2,64,32
//! head 32,16 bn
//! classes 3
//! tensor encoder.0.weight 2x64 <values>
//! ...
//! sha256 <hex of everything above>
//! ```
//!
//! Values are written with 17 significant digits, so a save/load cycle
//! reproduces every weight bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nets::{AnchorEncoder, BatchStandardize, Encoder, Linear, Model, ProjectionHead, Provenance};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Model,
    Anchor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: Kind,
    pub seed: u64,
    pub data_hash: String,
    pub encoder: Encoder,
    pub head: Option<ProjectionHead>,
    /// Absent for anchors.
    pub classifier: Option<Linear>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64, data_hash: &str) -> Self {
        Self {
            kind: Kind::Model,
            seed,
            data_hash: data_hash.into(),
            encoder: model.encoder.clone(),
            head: model.head.clone(),
            classifier: Some(model.classifier.clone()),
        }
    }

    pub fn from_anchor(anchor: &AnchorEncoder) -> Self {
        let p = anchor.provenance();
        Self {
            kind: Kind::Anchor,
            seed: p.seed,
            data_hash: p.data_hash.clone(),
            encoder: anchor.encoder().clone(),
            head: anchor.head().cloned(),
            classifier: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn into_model(self) -> Result<Model> {
        let classifier = self
            .classifier
            .ok_or_else(|| Error::InvalidArgument("checkpoint holds an anchor, not a classifier model".into()))?;
        Ok(Model {
            encoder: self.encoder,
            head: self.head,
            classifier,
        })
    }

    pub fn into_anchor(self) -> AnchorEncoder {
        let provenance = Provenance {
            seed: self.seed,
            data_hash: self.data_hash,
            steps: 0,
            validation_accuracy: f64::NAN,
        };
        AnchorEncoder::from_parts(self.encoder, self.head, provenance)
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.{i}.weight"), l.weight.clone()));
            out.push((format!("encoder.{i}.bias"), l.bias.clone()));
        }
        if let Some(h) = &self.head {
            out.push(("head.first.weight".into(), h.first.weight.clone()));
            out.push(("head.first.bias".into(), h.first.bias.clone()));
            if let Some(n) = &h.norm {
                let w = n.running_mean.len();
                out.push(("head.norm.mean".into(), Tensor::matrix(1, w, n.running_mean.clone()).unwrap()));
                out.push(("head.norm.var".into(), Tensor::matrix(1, w, n.running_var.clone()).unwrap()));
            }
            out.push(("head.second.weight".into(), h.second.weight.clone()));
            out.push(("head.second.bias".into(), h.second.bias.clone()));
        }
        if let Some(c) = &self.classifier {
            out.push(("classifier.weight".into(), c.weight.clone()));
            out.push(("classifier.bias".into(), c.bias.clone()));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("dccl-checkpoint v1\n");
        let kind = match self.kind {
            Kind::Model => "model",
            Kind::Anchor => "anchor",
        };
        writeln!(s, "kind {kind}").unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(s, "data_hash {}", self.data_hash).unwrap();
        let mut widths = vec![self.encoder.input_dim()];
        widths.extend(self.encoder.layers.iter().map(Linear::output_dim));
        writeln!(s, "encoder_widths {}", join(&widths)).unwrap();
        match &self.head {
            Some(h) => writeln!(
                s,
                "head {},{} {}",
                h.first.output_dim(),
                h.second.output_dim(),
                if h.norm.is_some() { "bn" } else { "plain" }
            )
            .unwrap(),
            None => s.push_str("head none\n"),
        }
        writeln!(s, "classes {}", self.classifier.as_ref().map_or(0, Linear::output_dim)).unwrap();
        for (name, t) in self.tensors() {
            write!(s, "tensor {name} {}x{}", t.rows(), t.cols()).unwrap();
            for v in t.data() {
                write!(s, " {v:.16e}").unwrap();
            }
            s.push('\n');
        }
        let digest = hex::encode(Sha256::digest(s.as_bytes()));
        writeln!(s, "sha256 {digest}").unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let body_end = text
            .rfind("sha256 ")
            .ok_or_else(|| perr(text.lines().count().max(1), "missing sha256 trailer".into()))?;
        let (body, trailer) = text.split_at(body_end);
        let trailer_line = body.lines().count() + 1;
        let stored = trailer.trim_end().strip_prefix("sha256 ").unwrap_or_default();
        if hex::encode(Sha256::digest(body.as_bytes())) != stored {
            return Err(perr(trailer_line, "checksum mismatch; the file is corrupted".into()));
        }

        let mut r = Reader {
            lines: body.lines().enumerate().map(|(i, l)| (i + 1, l)).collect(),
            pos: 0,
        };
        let (ln, magic) = r.next("header")?;
        if magic != "dccl-checkpoint v1" {
            return Err(perr(ln, format!("unexpected header `{magic}`")));
        }
        let (ln, kind) = r.field("kind")?;
        let kind = match kind {
            "model" => Kind::Model,
            "anchor" => Kind::Anchor,
            other => return Err(perr(ln, format!("unknown kind `{other}`"))),
        };
        let (ln, seed) = r.field("seed")?;
        let seed = seed.parse().map_err(|e| perr(ln, format!("seed: {e}")))?;
        let data_hash = r.field("data_hash")?.1.to_string();
        let (ln, widths) = r.field("encoder_widths")?;
        let widths = parse_list(widths).map_err(|e| perr(ln, e))?;
        if widths.len() < 2 {
            return Err(perr(ln, "need an input width and at least one layer".into()));
        }
        let (ln, head) = r.field("head")?;
        let head_spec = if head == "none" {
            None
        } else {
            let (dims, norm) = head.split_once(' ').ok_or_else(|| perr(ln, "malformed head".into()))?;
            let dims = parse_list(dims).map_err(|e| perr(ln, e))?;
            if dims.len() != 2 || !(norm == "bn" || norm == "plain") {
                return Err(perr(ln, format!("malformed head `{head}`")));
            }
            Some((dims[0], dims[1], norm == "bn"))
        };
        let (ln, classes) = r.field("classes")?;
        let classes: usize = classes.parse().map_err(|e| perr(ln, format!("classes: {e}")))?;
        if (kind == Kind::Model) != (classes > 0) {
            return Err(perr(ln, "classifier presence does not match kind".into()));
        }

        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| r.linear(&format!("encoder.{k}"), w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        let feat = *widths.last().unwrap();
        let head = match head_spec {
            None => None,
            Some((hidden, out, bn)) => {
                let first = r.linear("head.first", feat, hidden)?;
                let norm = if bn {
                    Some(BatchStandardize {
                        running_mean: r.tensor("head.norm.mean", 1, hidden)?.into_data(),
                        running_var: r.tensor("head.norm.var", 1, hidden)?.into_data(),
                    })
                } else {
                    None
                };
                let second = r.linear("head.second", hidden, out)?;
                Some(ProjectionHead { first, norm, second })
            }
        };
        let classifier = if classes > 0 {
            Some(r.linear("classifier", feat, classes)?)
        } else {
            None
        };
        if let Some(&(ln, extra)) = r.lines.get(r.pos) {
            return Err(perr(ln, format!("unexpected trailing line `{}`", truncate(extra))));
        }
        Ok(Self {
            kind,
            seed,
            data_hash,
            encoder: Encoder { layers },
            head,
            classifier,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn perr(line: usize, reason: String) -> Error {
    Error::Parse {
        what: "checkpoint",
        line,
        reason,
    }
}

struct Reader<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn next(&mut self, want: &str) -> Result<(usize, &'a str)> {
        let last = self.lines.last().map_or(1, |l| l.0);
        let item = *self
            .lines
            .get(self.pos)
            .ok_or_else(|| perr(last, format!("truncated before `{want}`")))?;
        self.pos += 1;
        Ok(item)
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (ln, l) = self.next(key)?;
        let v = l
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| perr(ln, format!("expected `{key}`")))?;
        Ok((ln, v))
    }

    fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<Tensor> {
        let (ln, rest) = self.field("tensor")?;
        let mut parts = rest.split(' ');
        let got = parts.next().unwrap_or_default();
        if got != name {
            return Err(perr(ln, format!("expected tensor `{name}`, found `{got}`")));
        }
        let shape = format!("{rows}x{cols}");
        let got_shape = parts.next().unwrap_or_default();
        if got_shape != shape {
            return Err(perr(ln, format!("tensor `{name}` has shape {got_shape}, expected {shape}")));
        }
        let data = parts
            .map(|p| p.parse::<f64>().map_err(|e| perr(ln, format!("`{name}` value `{p}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if data.len() != rows * cols {
            return Err(perr(ln, format!("tensor `{name}` has {} values, expected {}", data.len(), rows * cols)));
        }
        Tensor::matrix(rows, cols, data).map_err(|e| perr(ln, e.to_string()))
    }

    fn linear(&mut self, prefix: &str, input: usize, output: usize) -> Result<Linear> {
        Ok(Linear {
            weight: self.tensor(&format!("{prefix}.weight"), input, output)?,
            bias: self.tensor(&format!("{prefix}.bias"), 1, output)?,
        })
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

fn truncate(s: &str) -> &str {
    &s[..s.char_indices().nth(40).map_or(s.len(), |(i, _)| i)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ModelConfig;
    use crate::rng;

    fn model() -> Model {
        let mut m = Model::new(&ModelConfig::default(), &mut rng::seeded(5));
        m.head.as_mut().unwrap().norm.as_mut().unwrap().running_var[0] = 1.0 / 3.0;
        m
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let m = model();
        let c = Checkpoint::from_model(&m, 5, "abc");
        let back = Checkpoint::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.into_model().unwrap(), m);
    }

    #[test]
    fn headless_and_anchor_round_trip() {
        let mut m = model();
        m.head = None;
        let c = Checkpoint::from_model(&m, 1, "h");
        assert_eq!(Checkpoint::parse(&c.to_text()).unwrap(), c);
        let a = Checkpoint {
            kind: Kind::Anchor,
            classifier: None,
            ..Checkpoint::from_model(&model(), 2, "x")
        };
        let back = Checkpoint::parse(&a.to_text()).unwrap();
        assert_eq!(back, a);
        assert!(back.into_model().is_err());
    }

    #[test]
    fn corruption_is_detected() {
        let text = Checkpoint::from_model(&model(), 5, "abc").to_text();
        let flipped = text.replacen("tensor encoder.0.weight 2x64 ", "tensor encoder.0.weight 2x64 9", 1);
        assert!(matches!(Checkpoint::parse(&flipped), Err(Error::Parse { .. })));
        assert!(Checkpoint::parse(&text[..text.len() / 2]).is_err());
        assert!(Checkpoint::parse("garbage").is_err());
    }
}
