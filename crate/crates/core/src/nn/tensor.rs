use super::{NnError, Scalar};

/// Dense row-major array with an optional gradient slot of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![T::zero(); n],
            grad: None,
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
            grad: None,
        })
    }

    /// A trainable parameter: values plus a zeroed gradient.
    pub fn param(dims: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let mut t = Self::from_vec(dims, data)?;
        t.grad = Some(vec![T::zero(); t.data.len()]);
        Ok(t)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient slot, created zeroed on first use.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    /// Split borrow of values and gradient.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], &mut [T]) {
        let n = self.data.len();
        let g = self.grad.get_or_insert_with(|| vec![T::zero(); n]);
        (&mut self.data, g)
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self, NnError> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "cannot reshape {:?} to {dims:?}",
                self.dims
            )));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    /// Copy without the gradient slot.
    pub fn clone_values(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.clone(),
            grad: None,
        }
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    /// Number of values per batch item.
    pub fn sample_len(&self) -> usize {
        self.dims.iter().skip(1).product()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from(*v).expect("castable"))
                .collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::from(*v).expect("castable")).collect()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.batch(), 2);
        assert_eq!(t.sample_len(), 3);
        assert!(t.grad().is_none());
        let t = t.reshape(&[3, 2]).unwrap();
        assert_eq!(t.dims(), &[3, 2]);
        assert!(t.clone().reshape(&[4]).is_err());
    }

    #[test]
    fn params_carry_gradients() {
        let mut p = Tensor::<f32>::param(&[2], vec![1.0, 2.0]).unwrap();
        assert_eq!(p.grad(), Some(&[0.0f32, 0.0][..]));
        p.grad_mut()[1] = 3.0;
        p.zero_grad();
        assert_eq!(p.grad(), Some(&[0.0f32, 0.0][..]));
    }
}
