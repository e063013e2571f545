//! Per-layer parameter collections and their exact arithmetic.

use crate::tensor::Tensor;

/// Weights and bias of one parameterized layer. `layer_id` is the index of
/// the layer among the parameterized layers of its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub layer_id: u32,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Ordered per-layer parameter collection. Two `ParamVector`s built for the
/// same architecture are element-wise addable and subtractable; the flat
/// layout (layer order, weights then bias, row-major) is the canonical
/// serialization order used by the journal.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layers: Vec<LayerParams>,
}

/// Additive update with the same structure as [`ParamVector`]. A batch delta
/// equals (params after batch) - (params before batch) exactly, in the
/// arithmetic used.
pub type ParamDelta = ParamVector;

impl ParamVector {
    pub(crate) fn new(layers: Vec<LayerParams>) -> Self {
        ParamVector { layers }
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn zero_like(&self) -> ParamVector {
        ParamVector {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    layer_id: l.layer_id,
                    weights: Tensor::zeros(l.weights.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                })
                .collect(),
        }
    }

    fn same_structure(&self, other: &ParamVector) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.layer_id == b.layer_id
                    && a.weights.shape() == b.weights.shape()
                    && a.bias.shape() == b.bias.shape()
            })
    }

    pub fn add_assign(&mut self, other: &ParamVector) {
        assert!(self.same_structure(other), "param structure mismatch");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.values_mut().iter_mut().zip(b.weights.values()) {
                *x += y;
            }
            for (x, y) in a.bias.values_mut().iter_mut().zip(b.bias.values()) {
                *x += y;
            }
        }
    }

    pub fn sub_assign(&mut self, other: &ParamVector) {
        assert!(self.same_structure(other), "param structure mismatch");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.values_mut().iter_mut().zip(b.weights.values()) {
                *x -= y;
            }
            for (x, y) in a.bias.values_mut().iter_mut().zip(b.bias.values()) {
                *x -= y;
            }
        }
    }

    /// Flat values in canonical order: layers in order, weights then bias.
    pub fn to_flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.values());
            out.extend_from_slice(l.bias.values());
        }
        out
    }

    /// Rebuilds a vector with this one's structure from flat values.
    pub fn from_flat_like(template: &ParamVector, flat: &[f32]) -> Option<ParamVector> {
        if flat.len() != template.param_count() {
            return None;
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(template.layers.len());
        for l in &template.layers {
            let w_len = l.weights.len();
            let b_len = l.bias.len();
            let weights = Tensor::from_vec(
                l.weights.shape().to_vec(),
                flat[offset..offset + w_len].to_vec(),
            )
            .ok()?;
            offset += w_len;
            let bias = Tensor::from_vec(
                l.bias.shape().to_vec(),
                flat[offset..offset + b_len].to_vec(),
            )
            .ok()?;
            offset += b_len;
            layers.push(LayerParams {
                layer_id: l.layer_id,
                weights,
                bias,
            });
        }
        Some(ParamVector { layers })
    }

    /// Element-wise `self -= flat`, with `flat` in canonical order.
    pub fn sub_assign_flat(&mut self, flat: &[f32]) {
        assert_eq!(flat.len(), self.param_count(), "flat length mismatch");
        let mut offset = 0;
        for l in self.layers.iter_mut() {
            for x in l.weights.values_mut() {
                *x -= flat[offset];
                offset += 1;
            }
            for x in l.bias.values_mut() {
                *x -= flat[offset];
                offset += 1;
            }
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.values().iter().chain(l.bias.values()))
            .fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.ensure_finite().is_ok() && l.bias.ensure_finite().is_ok())
    }

    /// L2 norm accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        let sum: f64 = self
            .layers
            .iter()
            .flat_map(|l| l.weights.values().iter().chain(l.bias.values()))
            .map(|v| (*v as f64) * (*v as f64))
            .sum();
        sum.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(vals: &[f32]) -> ParamVector {
        ParamVector::new(vec![LayerParams {
            layer_id: 0,
            weights: Tensor::from_vec(vec![vals.len()], vals.to_vec()).unwrap(),
            bias: Tensor::zeros(&[1]),
        }])
    }

    #[test]
    fn flat_round_trip() {
        let v = pv(&[1.0, -2.0, 3.5]);
        let flat = v.to_flat();
        assert_eq!(flat.len(), 4);
        let back = ParamVector::from_flat_like(&v, &flat).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn add_then_sub_is_identity_on_grid() {
        // Grid-aligned values: exact group arithmetic.
        let mut a = pv(&[1.0, 0.5, -0.25]);
        let d = pv(&[0.125, -0.5, 0.75]);
        let orig = a.clone();
        a.add_assign(&d);
        a.sub_assign(&d);
        assert_eq!(a, orig);
    }
}
