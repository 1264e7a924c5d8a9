use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{NnError, Result};

/// Describes one tensor inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub layer: usize,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter storage with a stable tensor layout.
///
/// Wire format (little endian): `u32` header length, a JSON header
/// `{"layout":[...],"len":N}`, then `N` raw `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayoutEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    layout: Vec<LayoutEntry>,
    len: usize,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<LayoutEntry>) -> Result<Self> {
        let expected: usize = layout.iter().map(LayoutEntry::len).sum();
        if expected != values.len() {
            return Err(NnError::Decode(format!(
                "layout describes {expected} values, got {}",
                values.len()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    /// A single unnamed tensor.
    pub fn from_flat(values: Vec<f64>) -> Self {
        let layout = vec![LayoutEntry {
            layer: 0,
            shape: vec![values.len()],
        }];
        ParamVector { values, layout }
    }

    pub fn zeros(layout: Vec<LayoutEntry>) -> Self {
        let n = layout.iter().map(LayoutEntry::len).sum();
        ParamVector {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    pub fn ensure_same_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(NnError::LayoutMismatch)
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &ParamVector, alpha: f64) -> Result<()> {
        self.ensure_same_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `self = nu * source + (1 - nu) * self`
    pub fn blend_toward(&mut self, source: &ParamVector, nu: f64) -> Result<()> {
        self.ensure_same_layout(source)?;
        for (t, s) in self.values.iter_mut().zip(&source.values) {
            *t = nu * s + (1.0 - nu) * *t;
        }
        Ok(())
    }

    pub fn copy_from(&mut self, source: &ParamVector) -> Result<()> {
        self.ensure_same_layout(source)?;
        self.values.copy_from_slice(&source.values);
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        self.ensure_same_layout(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Concatenates vectors, renumbering layer ids so they stay unique.
    pub fn concat(parts: &[&ParamVector]) -> ParamVector {
        let mut values = Vec::new();
        let mut layout = Vec::new();
        let mut next_layer = 0;
        for part in parts {
            values.extend_from_slice(&part.values);
            let base = next_layer;
            for entry in &part.layout {
                layout.push(LayoutEntry {
                    layer: base + entry.layer,
                    shape: entry.shape.clone(),
                });
                next_layer = next_layer.max(base + entry.layer + 1);
            }
        }
        ParamVector { values, layout }
    }

    /// Copies consecutive chunks of `self` into `targets`, the inverse of
    /// [`ParamVector::concat`]. Only lengths are checked.
    pub fn split_into(&self, targets: &mut [&mut ParamVector]) -> Result<()> {
        let total: usize = targets.iter().map(|t| t.len()).sum();
        if total != self.len() {
            return Err(NnError::LayoutMismatch);
        }
        let mut offset = 0;
        for t in targets.iter_mut() {
            let n = t.len();
            t.values.copy_from_slice(&self.values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = serde_json::to_vec(&Header {
            layout: self.layout.clone(),
            len: self.values.len(),
        })?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
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

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| NnError::Decode(e.to_string());
        let mut len_buf = [0u8; 4];
        r.read_exact(&mut len_buf).map_err(io)?;
        let header_len = u32::from_le_bytes(len_buf) as usize;
        let mut header_buf = vec![0u8; header_len];
        r.read_exact(&mut header_buf).map_err(io)?;
        let header: Header =
            serde_json::from_slice(&header_buf).map_err(|e| NnError::Decode(e.to_string()))?;
        let mut values = Vec::with_capacity(header.len);
        let mut buf = [0u8; 8];
        for _ in 0..header.len {
            r.read_exact(&mut buf).map_err(io)?;
            values.push(f64::from_le_bytes(buf));
        }
        ParamVector::new(values, header.layout)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let pv = Self::read_from(bytes)?;
        let consumed = 4 + u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize + 8 * pv.len();
        if consumed != bytes.len() {
            return Err(NnError::Decode(format!(
                "{} trailing bytes",
                bytes.len() - consumed
            )));
        }
        Ok(pv)
    }
}
