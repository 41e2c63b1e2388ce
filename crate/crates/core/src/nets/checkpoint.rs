//! `OTMM1` text checkpoints.
//!
//! ```text
//! OTMM1
//! net potential
//! dim 2
//! hidden 64 64
//! activation celu 1
//! skip linear
//! beta 0.1
//! param a1 2 64 free
//! <64*2 values>
//! ...
//! end
//! net map
//! dim 2
//! hidden 64 64
//! param W1 2 64 free
//! ...
//! end
//! ```
//!
//! Values are written with 17 significant digits, so a save/load cycle is
//! exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Activation, IcnnNet, MapNet, MapSpec, SkipKind, StrongPotential};

pub const MAGIC: &str = "OTMM1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub potential: Option<StrongPotential>,
    pub map: Option<MapNet>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_params(out: &mut String, params: &ParamStore) {
    for p in params.iter() {
        let kind = if p.nonneg { "nonneg" } else { "free" };
        let _ = writeln!(out, "param {} {} {} {kind}", p.name, p.value.rows(), p.value.cols());
        let line: Vec<String> = p.value.as_slice().iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

fn join_usize(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

impl Checkpoint {
    pub fn with_potential(potential: StrongPotential) -> Self {
        Self {
            potential: Some(potential),
            map: None,
        }
    }

    pub fn with_map(map: MapNet) -> Self {
        Self {
            potential: None,
            map: Some(map),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\n");
        if let Some(pot) = &self.potential {
            let icnn = pot.icnn();
            out.push_str("net potential\n");
            let _ = writeln!(out, "dim {}", icnn.dim());
            let _ = writeln!(out, "hidden {}", join_usize(icnn.hidden()));
            match icnn.activation() {
                Activation::Relu => out.push_str("activation relu\n"),
                Activation::Celu(n) => {
                    let _ = writeln!(out, "activation celu {}", fmt_f64(n));
                }
            }
            let skip = match icnn.skip() {
                SkipKind::Linear => "linear",
                SkipKind::Quadratic => "quadratic",
            };
            let _ = writeln!(out, "skip {skip}");
            let _ = writeln!(out, "beta {}", fmt_f64(pot.beta()));
            write_params(&mut out, pot.params());
            out.push_str("end\n");
        }
        if let Some(map) = &self.map {
            out.push_str("net map\n");
            let _ = writeln!(out, "dim {}", super::TransportMap::dim(map));
            let _ = writeln!(out, "hidden {}", join_usize(map.hidden()));
            write_params(&mut out, map.params());
            out.push_str("end\n");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((n, other)) => return Err(Error::parse(n, format!("expected {MAGIC}, found {other:?}"))),
            None => return Err(Error::parse(1, "empty checkpoint")),
        }
        let mut ckpt = Checkpoint::default();
        while let Some((n, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let family = line
                .strip_prefix("net ")
                .ok_or_else(|| Error::parse(n, format!("expected `net <family>`, found {line:?}")))?;
            let mut header = NetHeader::default();
            let mut params = ParamStore::new();
            loop {
                let (n, line) = lines
                    .next()
                    .ok_or_else(|| Error::parse(n, "unterminated net section"))?;
                if line == "end" {
                    break;
                }
                let mut parts = line.split_whitespace();
                let key = parts.next().unwrap_or("");
                let rest: Vec<&str> = parts.collect();
                match key {
                    "param" => {
                        let [name, rows, cols, kind] = rest[..] else {
                            return Err(Error::parse(n, "param line needs name, rows, cols, kind"));
                        };
                        let rows: usize = parse_num(n, rows)?;
                        let cols: usize = parse_num(n, cols)?;
                        let nonneg = match kind {
                            "nonneg" => true,
                            "free" => false,
                            k => return Err(Error::parse(n, format!("unknown param kind {k:?}"))),
                        };
                        let (vn, values) = lines.next().ok_or_else(|| Error::parse(n, "missing values"))?;
                        let data = values
                            .split_whitespace()
                            .map(|v| parse_num::<f64>(vn, v))
                            .collect::<Result<Vec<_>>>()?;
                        let t = Tensor::from_vec(rows, cols, data).map_err(|e| Error::parse(vn, e.to_string()))?;
                        params.push(name, t, nonneg);
                    }
                    _ => header.set(n, key, &rest)?,
                }
            }
            match family {
                "potential" => {
                    let dim = header.dim.ok_or_else(|| Error::parse(n, "missing dim"))?;
                    let icnn = IcnnNet::from_store(
                        dim,
                        &header.hidden,
                        header.activation.unwrap_or(Activation::Relu),
                        header.skip.unwrap_or(SkipKind::Linear),
                        params,
                    )?;
                    ckpt.potential = Some(StrongPotential::new(icnn, header.beta.unwrap_or(0.0))?);
                }
                "map" => {
                    let dim = header.dim.ok_or_else(|| Error::parse(n, "missing dim"))?;
                    ckpt.map = Some(MapNet::from_store(&MapSpec::new(dim, &header.hidden), params)?);
                }
                f => return Err(Error::parse(n, format!("unknown net family {f:?}"))),
            }
        }
        Ok(ckpt)
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

#[derive(Default)]
struct NetHeader {
    dim: Option<usize>,
    hidden: Vec<usize>,
    activation: Option<Activation>,
    skip: Option<SkipKind>,
    beta: Option<f64>,
}

impl NetHeader {
    fn set(&mut self, n: usize, key: &str, rest: &[&str]) -> Result<()> {
        match (key, rest) {
            ("dim", [d]) => self.dim = Some(parse_num(n, d)?),
            ("hidden", ws) => {
                self.hidden = ws.iter().map(|w| parse_num(n, w)).collect::<Result<_>>()?;
            }
            ("activation", ["relu"]) => self.activation = Some(Activation::Relu),
            ("activation", ["celu", v]) => self.activation = Some(Activation::Celu(parse_num(n, v)?)),
            ("skip", ["linear"]) => self.skip = Some(SkipKind::Linear),
            ("skip", ["quadratic"]) => self.skip = Some(SkipKind::Quadratic),
            ("beta", [b]) => self.beta = Some(parse_num(n, b)?),
            _ => return Err(Error::parse(n, format!("unrecognized line `{key} {}`", rest.join(" ")))),
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("invalid number {s:?}")))
}
