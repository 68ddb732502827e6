//! Line-oriented checkpoint container. Parameters are stored as the hex
//! bit patterns of their `f64` values, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use crate::NeuralError;

const MAGIC: &str = "npi-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerShape {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub schema: String,
    pub meta: BTreeMap<String, String>,
    pub layers: Vec<LayerShape>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn meta_usize(&self, key: &str) -> Result<usize, NeuralError> {
        self.meta
            .get(key)
            .ok_or_else(|| NeuralError::Checkpoint(format!("missing meta key {key}")))?
            .parse()
            .map_err(|_| NeuralError::Checkpoint(format!("meta key {key} is not an integer")))
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{MAGIC} {FORMAT_VERSION}")?;
        writeln!(w, "kind {}", self.kind)?;
        writeln!(w, "schema {}", self.schema)?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k} {v}")?;
        }
        for l in &self.layers {
            writeln!(w, "layer {} {} {}", l.name, l.input, l.output)?;
        }
        writeln!(w, "params {}", self.params.len())?;
        for p in &self.params {
            writeln!(w, "{:016x}", p.to_bits())?;
        }
        writeln!(w, "end")
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, NeuralError> {
        let bad = |m: String| NeuralError::Checkpoint(m);
        let mut lines = r.lines();
        let mut next = || -> Result<String, NeuralError> {
            lines
                .next()
                .ok_or_else(|| NeuralError::Checkpoint("unexpected end of file".into()))?
                .map_err(NeuralError::Io)
        };
        let header = next()?;
        match header.split_once(' ') {
            Some((MAGIC, v)) if v.parse() == Ok(FORMAT_VERSION) => {}
            _ => return Err(bad(format!("unrecognised header {header:?}"))),
        }
        let mut ck = Checkpoint {
            kind: String::new(),
            schema: String::new(),
            meta: BTreeMap::new(),
            layers: Vec::new(),
            params: Vec::new(),
        };
        loop {
            let line = next()?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("kind") => ck.kind = parts.next().unwrap_or_default().to_string(),
                Some("schema") => ck.schema = parts.next().unwrap_or_default().to_string(),
                Some("meta") => {
                    let (Some(k), Some(v)) = (parts.next(), parts.next()) else {
                        return Err(bad(format!("malformed meta line {line:?}")));
                    };
                    ck.meta.insert(k.to_string(), v.to_string());
                }
                Some("layer") => {
                    let f: Vec<&str> = parts.collect();
                    let parsed = match f.as_slice() {
                        [name, i, o] => i.parse().ok().zip(o.parse().ok()).map(|(input, output)| {
                            LayerShape {
                                name: name.to_string(),
                                input,
                                output,
                            }
                        }),
                        _ => None,
                    };
                    ck.layers
                        .push(parsed.ok_or_else(|| bad(format!("malformed layer line {line:?}")))?);
                }
                Some("params") => {
                    let count: usize = parts
                        .next()
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| bad("malformed params count".into()))?;
                    ck.params.reserve(count);
                    for _ in 0..count {
                        let hex = next()?;
                        let bits = u64::from_str_radix(hex.trim(), 16)
                            .map_err(|_| bad(format!("bad parameter word {hex:?}")))?;
                        ck.params.push(f64::from_bits(bits));
                    }
                    if next()?.trim() != "end" {
                        return Err(bad("missing end marker".into()));
                    }
                    break;
                }
                _ => return Err(bad(format!("unexpected line {line:?}"))),
            }
        }
        let expected: usize = ck.layers.iter().map(|l| l.output * (l.input + 1)).sum();
        if expected != ck.params.len() {
            return Err(bad(format!(
                "layers describe {expected} parameters, file holds {}",
                ck.params.len()
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut w = io::BufWriter::new(fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::read(BufReader::new(fs::File::open(path)?))
    }
}
