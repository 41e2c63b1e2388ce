use crate::tensor::Tensor;

/// Index of an array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Entries must stay `>= 0` after every projection.
    pub nonneg: bool,
}

/// Named parameter arrays in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor, nonneg: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            nonneg,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Clamps every flagged array to be entrywise nonnegative.
    pub fn project_nonneg(&mut self) {
        for p in self.params.iter_mut().filter(|p| p.nonneg) {
            p.value.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }

    pub fn nonneg_holds(&self) -> bool {
        self.params
            .iter()
            .filter(|p| p.nonneg)
            .all(|p| p.value.as_slice().iter().all(|&v| v >= 0.0))
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    /// Rescales `id` so its Frobenius norm is at most `bound`.
    pub fn clip_norm(&mut self, id: ParamId, bound: f64) {
        let v = &mut self.params[id.0].value;
        let n = crate::tensor::norm(v.as_slice());
        if n > bound {
            let s = bound / n;
            v.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Zero arrays with the store's shapes.
    pub fn zeros_like(&self) -> Gradients {
        Gradients(
            self.params
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        )
    }

    /// All entries in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.as_slice().iter().copied())
            .collect()
    }
}

/// Gradient arrays aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(Tensor::all_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|t| t.as_slice().iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_only_touches_flagged_arrays() {
        let mut s = ParamStore::new();
        let w = s.push("w", Tensor::row_vector(&[-0.3, 0.7]), true);
        let a = s.push("a", Tensor::row_vector(&[-0.3, 0.7]), false);
        assert!(!s.nonneg_holds());
        s.project_nonneg();
        assert_eq!(s.value(w).as_slice(), &[0.0, 0.7]);
        assert_eq!(s.value(a).as_slice(), &[-0.3, 0.7]);
        assert!(s.nonneg_holds());
    }

    #[test]
    fn clip_norm_rescales() {
        let mut s = ParamStore::new();
        let a = s.push("a", Tensor::row_vector(&[3.0, 4.0]), false);
        s.clip_norm(a, 1.0);
        assert!((crate::tensor::norm(s.value(a).as_slice()) - 1.0).abs() < 1e-15);
        s.clip_norm(a, 2.0);
        assert!((crate::tensor::norm(s.value(a).as_slice()) - 1.0).abs() < 1e-15);
    }
}
