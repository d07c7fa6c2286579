use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use super::{Element, Tensor};

/// Value and gradient accumulator behind one or more [`Param`] handles.
#[derive(Debug)]
pub struct ParamCell<T> {
    pub value: Tensor<T>,
    pub grad: Vec<T>,
}

/// A named trainable tensor.
///
/// Cloning a `Param` clones the handle, not the storage. Two networks whose
/// layers are linked hold handles to the same cell, so a write or a gradient
/// accumulated through either one is visible through both.
#[derive(Clone, Debug)]
pub struct Param<T> {
    name: String,
    cell: Arc<RwLock<ParamCell<T>>>,
}

impl<T: Element> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = vec![T::zero(); value.numel()];
        Self {
            name: name.into(),
            cell: Arc::new(RwLock::new(ParamCell { value, grad })),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> Vec<usize> {
        self.read().value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.read().value.numel()
    }

    pub fn read(&self) -> RwLockReadGuard<'_, ParamCell<T>> {
        self.cell.read().expect("parameter lock poisoned")
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, ParamCell<T>> {
        self.cell.write().expect("parameter lock poisoned")
    }

    pub fn value(&self) -> Tensor<T> {
        self.read().value.clone()
    }

    pub fn grad(&self) -> Vec<T> {
        self.read().grad.clone()
    }

    /// Overwrites the value; the new tensor must have the same shape.
    pub fn set_value(&self, value: Tensor<T>) {
        let mut cell = self.write();
        assert_eq!(cell.value.shape(), value.shape(), "set_value on `{}`", self.name);
        cell.value = value;
    }

    pub fn zero_grad(&self) {
        self.write().grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn accumulate_grad(&self, delta: &[T]) {
        let mut cell = self.write();
        for (g, &d) in cell.grad.iter_mut().zip(delta) {
            *g = *g + d;
        }
    }

    /// True when both handles resolve to one storage cell.
    pub fn shares_storage_with(&self, other: &Param<T>) -> bool {
        Arc::ptr_eq(&self.cell, &other.cell)
    }

    /// Re-points this handle at `other`'s storage, keeping this handle's name.
    pub fn alias(&mut self, other: &Param<T>) {
        self.cell = Arc::clone(&other.cell);
    }

    /// Stable identity of the underlying storage, for de-duplication.
    pub fn storage_id(&self) -> usize {
        Arc::as_ptr(&self.cell) as *const () as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alias_shares_value_and_grad() {
        let a = Param::new("a", Tensor::<f32>::zeros(vec![2]));
        let mut b = Param::new("b", Tensor::<f32>::zeros(vec![2]));
        assert!(!a.shares_storage_with(&b));
        b.alias(&a);
        assert!(a.shares_storage_with(&b));
        assert_eq!(b.name(), "b");
        a.set_value(Tensor::new(vec![2], vec![0.5, 0.5]).unwrap());
        assert_eq!(b.value().data(), &[0.5, 0.5]);
        a.accumulate_grad(&[1.0, 2.0]);
        b.accumulate_grad(&[1.0, 2.0]);
        assert_eq!(a.grad(), vec![2.0, 4.0]);
    }
}
