use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A named, shaped slice of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

impl Segment {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered segment table. Immutable once built; shared between a parameter
/// vector and every gradient taken with respect to it.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Layout {
    segments: Vec<Segment>,
    total: usize,
}

impl Layout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Name of the segment containing flat index `i`.
    pub fn segment_at(&self, i: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.range().contains(&i))
    }

    /// Segments whose name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Segment> + 'a {
        self.segments.iter().filter(move |s| s.name.starts_with(prefix))
    }
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    segments: Vec<Segment>,
    total: usize,
}

impl LayoutBuilder {
    /// Appends a segment and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.total;
        let seg = Segment {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        self.total += seg.len();
        self.segments.push(seg);
        offset
    }

    pub fn build(self) -> Arc<Layout> {
        Arc::new(Layout {
            segments: self.segments,
            total: self.total,
        })
    }
}

/// One unflattened segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat model parameters together with their segment layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Config(format!(
                "parameter vector has {} values but layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn unflatten(&self) -> Vec<Tensor> {
        self.layout
            .segments()
            .iter()
            .map(|s| Tensor {
                name: s.name.clone(),
                shape: s.shape.clone(),
                data: self.values[s.range()].to_vec(),
            })
            .collect()
    }

    /// Reassembles tensors into a flat vector; tensors must match `layout` in
    /// order, name and shape.
    pub fn flatten(layout: Arc<Layout>, tensors: &[Tensor]) -> Result<Self> {
        if tensors.len() != layout.segments().len() {
            return Err(Error::Config(format!(
                "expected {} tensors, got {}",
                layout.segments().len(),
                tensors.len()
            )));
        }
        let mut values = Vec::with_capacity(layout.len());
        for (seg, t) in layout.segments().iter().zip(tensors) {
            if seg.name != t.name || seg.shape != t.shape || t.data.len() != seg.len() {
                return Err(Error::Config(format!(
                    "tensor {} {:?} does not match segment {} {:?}",
                    t.name, t.shape, seg.name, seg.shape
                )));
            }
            values.extend_from_slice(&t.data);
        }
        Ok(Self { layout, values })
    }
}

/// Derivative of a scalar loss with respect to a [`ParamVector`], in the same
/// layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Config(format!(
                "gradient has {} values but layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_layout(&self, other: &Gradient) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::Config("gradient layouts differ".into()))
        }
    }

    pub fn dot(&self, other: &Gradient) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Zeroes every segment whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for seg in self.layout.clone().with_prefix(prefix) {
            self.values[seg.range()].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Errors with the first segment holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => {
                let name = self
                    .layout
                    .segment_at(i)
                    .map_or("<unknown>", |s| s.name());
                Err(Error::Numeric(format!("gradient segment {name}")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> Arc<Layout> {
        let mut b = Layout::builder();
        b.push("a.weight", &[2, 3]);
        b.push("a.bias", &[3]);
        b.push("b.weight", &[3, 1]);
        b.build()
    }

    #[test]
    fn offsets_follow_push_order() {
        let l = layout();
        assert_eq!(l.len(), 12);
        assert_eq!(l.segment("a.bias").unwrap().range(), 6..9);
        assert_eq!(l.segment_at(10).unwrap().name(), "b.weight");
        assert_eq!(l.with_prefix("a.").count(), 2);
    }

    #[test]
    fn flatten_rejects_wrong_shapes() {
        let p = ParamVector::zeros(layout());
        let mut t = p.unflatten();
        t[0].shape = vec![3, 2];
        assert!(ParamVector::flatten(layout(), &t).is_err());
    }

    #[test]
    fn zero_prefix_touches_only_matching_segments() {
        let mut g = Gradient::from_values(layout(), vec![1.0; 12]).unwrap();
        g.zero_prefix("a.");
        assert_eq!(&g.values()[..9], &[0.0; 9]);
        assert_eq!(&g.values()[9..], &[1.0; 3]);
    }

    #[test]
    fn non_finite_reports_segment() {
        let mut v = vec![0.0; 12];
        v[7] = f64::NAN;
        let g = Gradient::from_values(layout(), v).unwrap();
        let err = g.check_finite().unwrap_err().to_string();
        assert!(err.contains("a.bias"), "{err}");
    }

    #[test]
    fn clip_norm_caps_length() {
        let mut g = Gradient::from_values(layout(), vec![1.0; 12]).unwrap();
        let before = g.clip_norm(1.0);
        assert!((before - 12f64.sqrt()).abs() < 1e-12);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trips(values in proptest::collection::vec(any::<f64>(), 12)) {
            let p = ParamVector::from_values(layout(), values.clone()).unwrap();
            let back = ParamVector::flatten(layout(), &p.unflatten()).unwrap();
            // compare bit patterns so NaN payloads count too
            let a: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
