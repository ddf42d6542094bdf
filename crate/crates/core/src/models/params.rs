//! Flat parameter vectors and their binary checkpoint encoding.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"FGPV" | version u32 = 1 | entries u32
//! per entry: name_len u32 | name (utf-8) | rank u32 | dims u64 * rank
//! values u64 | f64 * values
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FGPV";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Vec<ParamSpec>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<ParamSpec>) -> Result<Self> {
        let expected: usize = layout.iter().map(ParamSpec::numel).sum();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "layout describes {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Vec<ParamSpec>) -> Self {
        let n = layout.iter().map(ParamSpec::numel).sum();
        Self {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Shape(format!(
                "parameter layouts differ ({} vs {} values)",
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(())
    }

    /// Euclidean norm of the parameters.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.layout.len() as u32).to_le_bytes())?;
        for spec in &self.layout {
            w.write_all(&(spec.name.len() as u32).to_le_bytes())?;
            w.write_all(spec.name.as_bytes())?;
            w.write_all(&(spec.shape.len() as u32).to_le_bytes())?;
            for &d in &spec.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
        }
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * self.values.len() + 64);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("parameter checkpoint: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a parameter checkpoint".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut u32buf).map_err(fmt)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let entries = read_u32(&mut r)? as usize;
        let mut layout = Vec::with_capacity(entries.min(1024));
        for _ in 0..entries {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(fmt)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not utf-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                r.read_exact(&mut u64buf).map_err(fmt)?;
                shape.push(u64::from_le_bytes(u64buf) as usize);
            }
            layout.push(ParamSpec { name, shape });
        }
        r.read_exact(&mut u64buf).map_err(fmt)?;
        let count = u64::from_le_bytes(u64buf) as usize;
        let mut values = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            r.read_exact(&mut u64buf).map_err(fmt)?;
            values.push(f64::from_le_bytes(u64buf));
        }
        Self::new(values, layout)
    }
}
