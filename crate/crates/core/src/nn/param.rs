use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a segment of a flat parameter vector holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Weight,
    Bias,
    /// Adapter channel scale (alpha).
    Scale,
    /// Adapter channel shift (beta).
    Shift,
}

/// One contiguous block of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub layer: usize,
    pub role: Role,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(layer: usize, role: Role, shape: Vec<usize>) -> Self {
        Self { layer, role, shape }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat real vector with a layout describing which layer owns which range.
///
/// Shared weights, adapter parameters, hypernetwork weights and the ADMM
/// multipliers all live in this type; the multipliers reuse the layout of the
/// variable they are attached to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<Segment>) -> Result<Self> {
        let expected: usize = layout.iter().map(Segment::size).sum();
        if expected != values.len() {
            return Err(Error::config(format!(
                "parameter vector has {} values but layout describes {}",
                values.len(),
                expected
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("parameter {i} is not finite")));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Vec<Segment>) -> Self {
        let n = layout.iter().map(Segment::size).sum();
        Self {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn filled(layout: Vec<Segment>, value: f64) -> Self {
        let n = layout.iter().map(Segment::size).sum();
        Self {
            values: vec![value; n],
            layout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    /// Same layout, new values. Panics on a length mismatch.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            self.values.len(),
            "value count must match layout"
        );
        Self {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Elementwise mean of a nonempty set of vectors sharing one layout.
    pub fn mean(items: &[ParamVector]) -> Result<ParamVector> {
        let first = items
            .first()
            .ok_or_else(|| Error::usage("mean of an empty set of parameter vectors"))?;
        let mut out = first.zeros_like();
        for item in items {
            if item.len() != out.len() {
                return Err(Error::config("mean over vectors of different lengths"));
            }
            out.axpy(1.0, item);
        }
        out.scale(1.0 / items.len() as f64);
        Ok(out)
    }

    /// Stable content hash of values and layout.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for s in &self.layout {
            h.update((s.layer as u64).to_le_bytes());
            h.update([s.role as u8]);
            for d in &s.shape {
                h.update((*d as u64).to_le_bytes());
            }
        }
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Concatenate layouts, shifting layer ids of each part past the previous one.
pub(crate) fn concat_layouts(parts: &[Vec<Segment>]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut offset = 0;
    for part in parts {
        let max_layer = part.iter().map(|s| s.layer + 1).max().unwrap_or(0);
        out.extend(part.iter().map(|s| Segment {
            layer: s.layer + offset,
            ..s.clone()
        }));
        offset += max_layer;
    }
    out
}
