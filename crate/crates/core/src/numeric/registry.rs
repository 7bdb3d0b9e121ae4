use std::collections::HashMap;

use rand::Rng;

use super::{NumericError, Tensor};

/// Handle to one named parameter tensor in a [`ParamRegistry`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors, their gradient accumulators and Adam moments.
///
/// Parameters are stored in registration order; names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamRegistry {
    names: Vec<String>,
    lookup: HashMap<String, ParamId>,
    pub(crate) values: Vec<Tensor>,
    pub(crate) grads: Vec<Tensor>,
    pub(crate) first_moment: Vec<Tensor>,
    pub(crate) second_moment: Vec<Tensor>,
    pub(crate) step: u64,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<ParamId, NumericError> {
        if self.lookup.contains_key(name) {
            return Err(NumericError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.values.len());
        let shape = value.shape().to_vec();
        self.names.push(name.to_string());
        self.lookup.insert(name.to_string(), id);
        self.values.push(value);
        self.grads.push(Tensor::zeros(&shape));
        self.first_moment.push(Tensor::zeros(&shape));
        self.second_moment.push(Tensor::zeros(&shape));
        Ok(id)
    }

    /// Registers a tensor drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn register_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId, NumericError> {
        let limit = 1.0 / (fan_in.max(1) as f64).sqrt();
        let count = shape.iter().product();
        let data = (0..count).map(|_| rng.random_range(-limit..=limit)).collect();
        self.register(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn register_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, NumericError> {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    /// Parameter values for reading alongside mutable gradient accumulators.
    pub fn split_mut(&mut self) -> (&[Tensor], &mut [Tensor]) {
        (&self.values, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Global l2 norm over every gradient accumulator.
    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Named copy of every parameter value, in registration order.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }

    /// Overwrites values from a named snapshot. Every registered name must be
    /// present with a matching shape; optimizer state is left untouched.
    pub fn load(&mut self, entries: &[(String, Tensor)]) -> Result<(), NumericError> {
        let by_name: HashMap<&str, &Tensor> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        if by_name.len() != self.values.len() {
            return Err(NumericError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.values.len(),
                by_name.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| NumericError::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != self.values[i].shape() {
                return Err(NumericError::Checkpoint(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    t.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = (*t).clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grads_track_param_shapes() {
        let mut reg = ParamRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = reg.register_uniform("a", &[3, 4], 4, &mut rng).unwrap();
        let b = reg.register_zeros("b", &[3]).unwrap();
        for id in [a, b] {
            assert_eq!(reg.grad(id).shape(), reg.value(id).shape());
        }
        assert!(reg.value(a).max_abs() <= 0.5);
        assert_eq!(reg.scalar_count(), 15);
        assert!(matches!(
            reg.register_zeros("a", &[1]),
            Err(NumericError::DuplicateParam(_))
        ));
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut reg = ParamRegistry::new();
        reg.register_zeros("w", &[2, 2]).unwrap();
        let bad = vec![("w".to_string(), Tensor::zeros(&[4]))];
        assert!(reg.load(&bad).is_err());
        let good = vec![("w".to_string(), Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap())];
        reg.load(&good).unwrap();
        assert_eq!(reg.values()[0].data(), &[1.0; 4]);
    }
}
