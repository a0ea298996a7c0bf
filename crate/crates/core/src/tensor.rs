//! Dense row-major tensor. This is deliberately minimal: shape + flat buffer,
//! with the indexing helpers the operators need. No views, no broadcasting.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: impl AsRef<[usize]>) -> Self {
        let shape = shape.as_ref();
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: impl AsRef<[usize]>, v: T) -> Self {
        let shape = shape.as_ref();
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_vec(shape: impl AsRef<[usize]>, data: Vec<T>) -> Self {
        let shape = shape.as_ref();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match buffer of {} elements",
            shape,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Rank-2 index.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> T {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Rank-3 index (typically [C, H, W]).
    #[inline]
    pub fn at3(&self, c: usize, h: usize, w: usize) -> T {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(c * self.shape[1] + h) * self.shape[2] + w]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, h: usize, w: usize, v: T) {
        debug_assert_eq!(self.shape.len(), 3);
        let i = (c * self.shape[1] + h) * self.shape[2] + w;
        self.data[i] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, v: T) {
        for x in &mut self.data {
            *x = v;
        }
    }

    /// `self += other`, shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    /// `self += k * other`.
    pub fn axpy(&mut self, k: T, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += k * b;
        }
    }

    pub fn scale(&mut self, k: T) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Named trainable (or tracked) tensor with an accumulated gradient buffer.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Running statistics and the like are saved/restored but never stepped.
    pub trainable: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor<T>) -> Self {
        let mut p = Self::new(name, value);
        p.trainable = false;
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::from_vec(&[2, 2, 3], (0..12).map(|i| i as f32).collect());
        assert_eq!(t.at3(0, 0, 0), 0.0);
        assert_eq!(t.at3(0, 1, 2), 5.0);
        assert_eq!(t.at3(1, 0, 0), 6.0);
        assert_eq!(t.at3(1, 1, 1), 10.0);
    }

    #[test]
    #[should_panic]
    fn shape_mismatch_panics() {
        let _ = Tensor::from_vec(&[2, 3], vec![1.0f32; 5]);
    }

    #[test]
    fn axpy_accumulates() {
        let mut a = Tensor::from_vec(&[3], vec![1.0f64, 2.0, 3.0]);
        let b = Tensor::from_vec(&[3], vec![10.0f64, 20.0, 30.0]);
        a.axpy(0.5, &b);
        assert_eq!(a.data(), &[6.0, 12.0, 18.0]);
    }
}
