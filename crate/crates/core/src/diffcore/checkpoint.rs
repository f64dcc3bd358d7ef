//! Text container for named tensors.
//!
//! ```text
//! posttrain-checkpoint v1
//! meta <key> <value>
//! tensor <name> <dim>x<dim>
//! <16-digit hex bit patterns, space separated>
//! end
//! ```
//!
//! Values are stored as raw IEEE-754 bit patterns, so a round trip is exact
//! and identical parameters always serialize to identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "posttrain-checkpoint v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(params: ParamSet) -> Self {
        Checkpoint {
            meta: BTreeMap::new(),
            params,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("unencodable meta entry `{k}`")));
            }
            writeln!(out, "meta {k} {v}").expect("string write");
        }
        for (name, t) in self.params.iter() {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::Checkpoint(format!("unencodable tensor name `{name}`")));
            }
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(out, "tensor {name} {}", dims.join("x")).expect("string write");
            let words: Vec<String> = t
                .values()
                .iter()
                .map(|v| format!("{:016x}", v.to_bits()))
                .collect();
            out.push_str(&words.join(" "));
            out.push('\n');
        }
        out.push_str("end\n");
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Checkpoint("missing header".into()));
        }
        let mut ckpt = Checkpoint::default();
        loop {
            let line = lines
                .next()
                .ok_or_else(|| Error::Checkpoint("missing `end` marker".into()))?;
            if line == "end" {
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let (name, dims) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::Checkpoint(format!("bad tensor line `{line}`")))?;
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Checkpoint(format!("bad shape `{dims}`: {e}")))?;
                let data = lines
                    .next()
                    .ok_or_else(|| Error::Checkpoint(format!("no values for `{name}`")))?;
                let values = data
                    .split_whitespace()
                    .map(|w| u64::from_str_radix(w, 16).map(f64::from_bits))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Checkpoint(format!("bad value in `{name}`: {e}")))?;
                ckpt.params.push(name, Tensor::new(shape, values)?);
            } else {
                return Err(Error::Checkpoint(format!("unexpected line `{line}`")));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_exact(values in proptest::collection::vec(any::<f64>(), 1..40)) {
            let n = values.len();
            let mut params = ParamSet::new();
            params.push("w", Tensor::new(vec![1, n], values).unwrap());
            params.push("b", Tensor::row(vec![0.5, -0.0]));
            let ckpt = Checkpoint::new(params).with_meta("head", "tokenized");
            let text = ckpt.to_text().unwrap();
            let back = Checkpoint::from_text(&text).unwrap();
            prop_assert_eq!(back.to_text().unwrap(), text);
            for ((_, a), (_, b)) in back.params.iter().zip(ckpt.params.iter()) {
                let same = a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits());
                prop_assert!(same);
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_text("hello").is_err());
        assert!(Checkpoint::from_text(&format!("{MAGIC}\ntensor w 2\n0\n")).is_err());
    }
}
