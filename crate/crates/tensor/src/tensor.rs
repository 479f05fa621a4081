use crate::{Real, Result, Rng, TensorError};

/// Dense row-major tensor with an optional accumulated gradient.
///
/// Dimensions may be zero (an empty batch is a valid tensor); constructors
/// that sample values reject them.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidShape {
                reason: format!("shape holds {numel} elements but data has {}", data.len()),
                shape,
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// I.i.d. standard-normal entries.
    pub fn randn(shape: &[usize], rng: &mut Rng) -> Result<Self> {
        Self::randn_scaled(shape, 0.0, 1.0, rng)
    }

    /// I.i.d. `N(mean, std²)` entries.
    pub fn randn_scaled(shape: &[usize], mean: f64, std: f64, rng: &mut Rng) -> Result<Self> {
        check_sampling_shape(shape)?;
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| T::of(mean + std * rng.normal())).collect();
        Tensor::new(shape.to_vec(), data)
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Result<Self> {
        check_sampling_shape(shape)?;
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| T::of(lo + (hi - lo) * rng.uniform())).collect();
        Tensor::new(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("cannot reshape {:?}", self.shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Copies rows `start..end` of the leading dimension.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * row..end * row].to_vec(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Gathers rows of the leading dimension.
    pub fn gather_rows(&self, rows: &[usize]) -> Self {
        let row: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * row);
        for &r in rows {
            data.extend_from_slice(&self.data[r * row..(r + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Adds `delta` into the stored gradient, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) {
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise conversion to another precision (gradient dropped).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

fn check_sampling_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "every dimension must be positive".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn randn_is_deterministic_per_seed() {
        let a = Tensor::<f32>::randn(&[100], &mut Rng::seed(7)).unwrap();
        let b = Tensor::<f32>::randn(&[100], &mut Rng::seed(7)).unwrap();
        assert!(a.all_finite());
        assert_eq!(a, b);
        assert!(!a.requires_grad);
    }

    #[test]
    fn randn_rejects_empty_dims() {
        assert!(matches!(
            Tensor::<f32>::randn(&[0], &mut Rng::seed(1)),
            Err(TensorError::InvalidShape { .. })
        ));
        assert!(Tensor::<f32>::randn(&[], &mut Rng::seed(1)).is_err());
        assert!(Tensor::<f32>::randn(&[3, 0, 2], &mut Rng::seed(1)).is_err());
    }

    #[test]
    fn randn_mean_is_near_zero() {
        // 400 samples: the sample mean has std 0.05, so ±0.25 is a 5-sigma band.
        for seed in 0..20 {
            let t = Tensor::<f32>::randn(&[4, 100], &mut Rng::seed(seed)).unwrap();
            let mean: f64 = t.data().iter().map(|&v| v as f64).sum::<f64>() / 400.0;
            assert!(mean.abs() < 0.25, "seed {seed}: mean {mean}");
        }
    }

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 5]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0f32; 6]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn gradient_accumulates() {
        let mut t = Tensor::<f32>::zeros(&[2]);
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[1.0, 2.0]);
        assert_eq!(t.grad.as_deref(), Some(&[2.0, 4.0][..]));
        t.zero_grad();
        assert!(t.grad.is_none());
    }
}
