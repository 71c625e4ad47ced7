//! Uniform access to every trainable tensor of a model, in a fixed order.
//!
//! Gradients are stored in a structure of the same type as the parameters, so
//! the same visitor walks both.

use crate::tensor::Tensor;

pub trait Parameters {
    /// Visits every tensor in a stable order with a dotted name.
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    /// All values concatenated in visiting order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        self.visit(&mut |_, t| out.extend_from_slice(t.data()));
        out
    }

    /// Overwrites all values from a flat buffer produced by [`flatten`].
    fn load_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
        assert_eq!(offset, flat.len(), "flat buffer length mismatch");
    }

    fn zero(&mut self) {
        self.visit_mut(&mut |_, t| t.fill(0.0));
    }

    fn scale(&mut self, factor: f64) {
        self.visit_mut(&mut |_, t| t.data_mut().iter_mut().for_each(|v| *v *= factor));
    }

    /// Global L2 norm over all tensors.
    fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.visit(&mut |_, t| sq += t.data().iter().map(|v| v * v).sum::<f64>());
        sq.sqrt()
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.is_finite());
        ok
    }

    /// `(name, offset, len)` for every tensor.
    fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut offset = 0;
        self.visit(&mut |name, t| {
            out.push((name.to_string(), offset, t.len()));
            offset += t.len();
        });
        out
    }
}
