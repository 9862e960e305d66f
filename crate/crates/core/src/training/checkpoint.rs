//! Self-describing text checkpoints with bit-exact numeric arrays.
//!
//! ```text
//! ensembits-ckpt/1
//! descriptor {"family":"relative-frame",...}
//! model {"input_dim":96,...}
//! residuals sublayer-sum
//! seed 7
//! best_epoch 12
//! epochs_run 30
//! array standardizer.mean 1 96
//! 3ff0000000000000 ...
//! ...
//! end
//! ```
//!
//! Every array value is the 16-digit hexadecimal bit pattern of an `f64`,
//! one line per row.

use std::path::Path;

use crate::descriptors::{DescriptorConfig, Standardizer};
use crate::error::{Error, Result};
use crate::neuralcore::{ModelConfig, ModelParams, Tensor};
use crate::quantizer::CodebookLevel;

pub const CHECKPOINT_FORMAT: &str = "ensembits-ckpt/1";

/// Residual placement of the encoder stack: `h ← h + attn(h)`, then
/// `h ← h + ff(h)`, with no normalization.
const RESIDUALS: &str = "sublayer-sum";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    /// Per-level utilization on the training set at the kept epoch.
    pub utilization: Vec<f64>,
    pub perplexity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: DescriptorConfig,
    pub standardizer: Standardizer,
    pub params: ModelParams,
    pub codebooks: Vec<CodebookLevel>,
    pub meta: TrainingMeta,
}

fn push_array(out: &mut String, name: &str, t: &Tensor) {
    out.push_str(&format!("array {name} {} {}\n", t.rows(), t.cols()));
    for r in 0..t.rows() {
        let row: Vec<String> = t
            .row(r)
            .iter()
            .map(|v| format!("{:016x}", v.to_bits()))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

fn row_vector(v: &[f64]) -> Tensor {
    Tensor::new(1, v.len(), v.to_vec()).expect("row vector shape")
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_FORMAT);
        out.push('\n');
        out.push_str(&format!(
            "descriptor {}\n",
            serde_json::to_string(&self.descriptor).expect("descriptor config serializes")
        ));
        out.push_str(&format!(
            "model {}\n",
            serde_json::to_string(self.params.config()).expect("model config serializes")
        ));
        out.push_str(&format!("residuals {RESIDUALS}\n"));
        out.push_str(&format!("seed {}\n", self.meta.seed));
        out.push_str(&format!("best_epoch {}\n", self.meta.best_epoch));
        out.push_str(&format!("epochs_run {}\n", self.meta.epochs_run));
        push_array(
            &mut out,
            "meta.best_val_loss",
            &Tensor::scalar(self.meta.best_val_loss),
        );
        push_array(
            &mut out,
            "meta.utilization",
            &row_vector(&self.meta.utilization),
        );
        push_array(
            &mut out,
            "meta.perplexity",
            &row_vector(&self.meta.perplexity),
        );
        push_array(
            &mut out,
            "standardizer.mean",
            &row_vector(&self.standardizer.mean),
        );
        push_array(
            &mut out,
            "standardizer.std",
            &row_vector(&self.standardizer.std),
        );
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            push_array(&mut out, &format!("param.{name}"), t);
        }
        for (l, level) in self.codebooks.iter().enumerate() {
            push_array(
                &mut out,
                &format!("codebook.{l}.codewords"),
                level.codewords(),
            );
            push_array(
                &mut out,
                &format!("codebook.{l}.count"),
                &row_vector(level.ema_count()),
            );
            push_array(&mut out, &format!("codebook.{l}.sum"), level.ema_sum());
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines.next().ok_or_else(|| {
                Error::parse(0, format!("unexpected end of checkpoint, expected {what}"))
            })
        };
        let (n, header) = next("format line")?;
        if header != CHECKPOINT_FORMAT {
            return Err(Error::parse(
                n,
                format!("unsupported checkpoint format {header:?}"),
            ));
        }
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (n, line) = next(key)?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok((n, v.to_string())),
                _ => Err(Error::parse(
                    n,
                    format!("expected `{key} …`, found {line:?}"),
                )),
            }
        };
        let (n, d) = field("descriptor")?;
        let descriptor: DescriptorConfig =
            serde_json::from_str(&d).map_err(|e| Error::parse(n, e.to_string()))?;
        let (n, m) = field("model")?;
        let model: ModelConfig =
            serde_json::from_str(&m).map_err(|e| Error::parse(n, e.to_string()))?;
        let (n, residuals) = field("residuals")?;
        if residuals != RESIDUALS {
            return Err(Error::parse(
                n,
                format!("unsupported residual placement {residuals:?}"),
            ));
        }
        let mut int = |key: &str| -> Result<u64> {
            let (n, v) = field(key)?;
            v.parse()
                .map_err(|_| Error::parse(n, format!("bad integer for {key}: {v:?}")))
        };
        let seed = int("seed")?;
        let best_epoch = int("best_epoch")? as usize;
        let epochs_run = int("epochs_run")? as usize;

        let mut arrays: Vec<(String, Tensor)> = Vec::new();
        let mut ended = false;
        while let Ok((n, line)) = next("array or end") {
            if line == "end" {
                ended = true;
                break;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (name, rows, cols) = match parts.as_slice() {
                ["array", name, r, c] => {
                    let r: usize = r.parse().map_err(|_| Error::parse(n, "bad row count"))?;
                    let c: usize = c.parse().map_err(|_| Error::parse(n, "bad column count"))?;
                    (name.to_string(), r, c)
                }
                _ => {
                    return Err(Error::parse(
                        n,
                        format!("expected an array header, found {line:?}"),
                    ))
                }
            };
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (n, row) = next("array row")?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    let bits = u64::from_str_radix(tok, 16)
                        .map_err(|_| Error::parse(n, format!("bad hex float {tok:?}")))?;
                    if tok.len() != 16 {
                        return Err(Error::parse(n, format!("bad hex float {tok:?}")));
                    }
                    data.push(f64::from_bits(bits));
                }
                if data.len() - before != cols {
                    return Err(Error::parse(
                        n,
                        format!("array {name}: expected {cols} values in row"),
                    ));
                }
            }
            if arrays.iter().any(|(a, _)| a == &name) {
                return Err(Error::parse(n, format!("duplicate array {name}")));
            }
            arrays.push((name, Tensor::new(rows, cols, data)?));
        }
        if !ended {
            return Err(Error::parse(0, "checkpoint is missing its `end` line"));
        }

        let mut take = |name: &str| -> Option<Tensor> {
            let i = arrays.iter().position(|(a, _)| a == name)?;
            Some(arrays.remove(i).1)
        };
        let require = |t: Option<Tensor>, name: &str| {
            t.ok_or_else(|| Error::parse(0, format!("checkpoint has no {name} array")))
        };

        let (mean, std) = match (take("standardizer.mean"), take("standardizer.std")) {
            (Some(m), Some(s)) => (m, s),
            _ => return Err(Error::parse(0, "checkpoint has no standardizer block")),
        };
        let standardizer = Standardizer::new(mean.into_data(), std.into_data())?;
        let best_val_loss = require(take("meta.best_val_loss"), "meta.best_val_loss")?;
        if best_val_loss.len() != 1 {
            return Err(Error::parse(0, "meta.best_val_loss must hold one value"));
        }
        let utilization = require(take("meta.utilization"), "meta.utilization")?.into_data();
        let perplexity = require(take("meta.perplexity"), "meta.perplexity")?.into_data();

        let mut codebooks = Vec::new();
        while let Some(cw) = take(&format!("codebook.{}.codewords", codebooks.len())) {
            let l = codebooks.len();
            let count = require(
                take(&format!("codebook.{l}.count")),
                &format!("codebook.{l}.count"),
            )?;
            let sum = require(
                take(&format!("codebook.{l}.sum")),
                &format!("codebook.{l}.sum"),
            )?;
            codebooks.push(CodebookLevel::from_parts(cw, count.into_data(), sum)?);
        }
        if codebooks.is_empty() {
            return Err(Error::parse(0, "checkpoint has no codebooks"));
        }

        let mut named = Vec::new();
        let mut rest = Vec::new();
        for (name, t) in arrays {
            match name.strip_prefix("param.") {
                Some(p) => named.push((p.to_string(), t)),
                None => rest.push(name),
            }
        }
        if let Some(name) = rest.first() {
            return Err(Error::parse(0, format!("unexpected array {name}")));
        }
        let params = ModelParams::from_named(model, named)?;
        let ckpt = Self {
            descriptor,
            standardizer,
            params,
            codebooks,
            meta: TrainingMeta {
                seed,
                best_epoch,
                epochs_run,
                best_val_loss: best_val_loss.data()[0],
                utilization,
                perplexity,
            },
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Cross-checks the dimensions of the bundled pieces.
    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        let cfg = self.params.config();
        if self.standardizer.dim() != cfg.input_dim {
            return Err(Error::invalid(format!(
                "standardizer has {} features, model expects {}",
                self.standardizer.dim(),
                cfg.input_dim
            )));
        }
        if self.descriptor.dim() != cfg.input_dim {
            return Err(Error::invalid(format!(
                "descriptor dimension {} differs from model input {}",
                self.descriptor.dim(),
                cfg.input_dim
            )));
        }
        if let Some(l) = self.codebooks.iter().find(|l| l.dim() != cfg.latent_dim) {
            return Err(Error::invalid(format!(
                "codebook dimension {} differs from latent dimension {}",
                l.dim(),
                cfg.latent_dim
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_text(&text)
}
