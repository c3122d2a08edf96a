//! Self-describing model checkpoints.
//!
//! Layout (UTF-8 text):
//!
//! ```text
//! ctxrank-checkpoint 1
//! config <single-line JSON: head config, encoder config, doc limit, metadata>
//! param <group> <name> <ndim> <dim_1> ... <dim_n>
//! <IEEE-754 bit patterns as 16 hex digits, up to 8 per line>
//! ...
//! end
//! ```
//!
//! `group` is `head` or `encoder`. Values are written as raw bit patterns,
//! so a save/load cycle reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contextualizer::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, ScoringHead};
use crate::params::{Param, ParamSet};
use crate::pipeline::Ranker;

const MAGIC: &str = "ctxrank-checkpoint 1";
const WORDS_PER_LINE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub head: HeadConfig,
    pub encoder: EncoderConfig,
    pub doc_limit: usize,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub head_params: ParamSet,
    pub encoder_params: Option<ParamSet>,
}

impl Checkpoint {
    pub fn from_ranker(ranker: &Ranker, encoder: &EncoderConfig) -> Self {
        let mut encoder = encoder.clone();
        encoder.active_layers = ranker.encoder.spec().active_layers;
        Checkpoint {
            config: ModelConfig {
                head: ranker.head.config.clone(),
                encoder,
                doc_limit: ranker.doc_limit,
                meta: BTreeMap::new(),
            },
            head_params: ranker.head.params.clone(),
            encoder_params: ranker.encoder.params().cloned(),
        }
    }

    /// Rebuilds the ranker this checkpoint describes.
    pub fn to_ranker(&self) -> Result<Ranker> {
        let mut head = ScoringHead::new(self.config.head.clone(), 0)?;
        head.params.load_from(&self.head_params)?;
        let mut encoder = self.config.encoder.build()?;
        match (encoder.params_mut(), &self.encoder_params) {
            (Some(dst), Some(src)) => dst.load_from(src)?,
            (None, None) => {}
            _ => return Err(Error::Checkpoint("encoder parameters do not match encoder kind".into())),
        }
        let mut ranker = Ranker::new(head, encoder)?;
        ranker.doc_limit = self.config.doc_limit;
        Ok(ranker)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let json = serde_json::to_string(&self.config).expect("config serializes");
        let _ = writeln!(out, "config {json}");
        write_group(&mut out, "head", &self.head_params);
        if let Some(e) = &self.encoder_params {
            write_group(&mut out, "encoder", e);
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Checkpoint("missing header".into()));
        }
        let config_line = lines
            .next()
            .and_then(|l| l.strip_prefix("config "))
            .ok_or_else(|| Error::Checkpoint("missing config line".into()))?;
        let config: ModelConfig =
            serde_json::from_str(config_line).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;

        let mut head = ParamSet::new();
        let mut encoder: Option<ParamSet> = None;
        let mut ended = false;
        while let Some(line) = lines.next() {
            if line == "end" {
                ended = true;
                break;
            }
            let mut cols = line.split_whitespace();
            if cols.next() != Some("param") {
                return Err(Error::Checkpoint(format!("unexpected line `{line}`")));
            }
            let group = cols.next().ok_or_else(|| Error::Checkpoint("missing group".into()))?;
            let name = cols.next().ok_or_else(|| Error::Checkpoint("missing name".into()))?;
            let dims: Vec<usize> = cols
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Checkpoint(format!("bad shape for `{name}`")))?;
            let (&ndim, shape) = dims
                .split_first()
                .ok_or_else(|| Error::Checkpoint(format!("bad shape for `{name}`")))?;
            if ndim != shape.len() {
                return Err(Error::Checkpoint(format!("bad shape for `{name}`")));
            }
            let mut param = Param::zeros(name, shape);
            let mut filled = 0;
            while filled < param.len() {
                let data = lines
                    .next()
                    .ok_or_else(|| Error::Checkpoint(format!("truncated values for `{name}`")))?;
                for word in data.split_whitespace() {
                    let bits = u64::from_str_radix(word, 16)
                        .map_err(|_| Error::Checkpoint(format!("bad value `{word}`")))?;
                    *param
                        .values
                        .get_mut(filled)
                        .ok_or_else(|| Error::Checkpoint(format!("too many values for `{name}`")))? =
                        f64::from_bits(bits);
                    filled += 1;
                }
            }
            match group {
                "head" => head.push(param),
                "encoder" => encoder.get_or_insert_with(ParamSet::new).push(param),
                _ => return Err(Error::Checkpoint(format!("unknown group `{group}`"))),
            }
        }
        if !ended {
            return Err(Error::Checkpoint("missing end marker".into()));
        }
        Ok(Checkpoint {
            config,
            head_params: head,
            encoder_params: encoder,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn write_group(out: &mut String, group: &str, params: &ParamSet) {
    for p in params.iter() {
        let _ = write!(out, "param {group} {} {}", p.name, p.shape.len());
        for d in &p.shape {
            let _ = write!(out, " {d}");
        }
        out.push('\n');
        for chunk in p.values.chunks(WORDS_PER_LINE) {
            let words: Vec<String> = chunk.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            out.push_str(&words.join(" "));
            out.push('\n');
        }
    }
}
