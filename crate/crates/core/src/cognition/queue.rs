use std::collections::VecDeque;

use crate::tensor::Tensor;

/// FIFO bank of unit-norm negative keys.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeQueue {
    capacity: usize,
    dim: usize,
    rows: VecDeque<Vec<f64>>,
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            rows: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends every row of `[B, dim]` keys, evicting the oldest when full.
    pub fn push(&mut self, keys: &Tensor) {
        assert_eq!(keys.shape()[1], self.dim, "key width mismatch");
        for row in keys.data().chunks(self.dim) {
            if self.capacity == 0 {
                return;
            }
            if self.rows.len() == self.capacity {
                self.rows.pop_front();
            }
            self.rows.push_back(row.to_vec());
        }
    }

    /// Contents as `[len, dim]`, oldest first.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.rows.iter().flatten().copied().collect();
        Tensor::new(&[self.rows.len(), self.dim], data)
    }

    pub fn from_tensor(capacity: usize, keys: &Tensor) -> Self {
        let mut q = Self::new(capacity, keys.shape()[1]);
        if !keys.is_empty() {
            q.push(keys);
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_oldest_first() {
        let mut q = NegativeQueue::new(3, 1);
        q.push(&Tensor::new(&[2, 1], vec![1.0, 2.0]));
        q.push(&Tensor::new(&[2, 1], vec![3.0, 4.0]));
        assert_eq!(q.len(), 3);
        assert_eq!(q.to_tensor().data(), &[2.0, 3.0, 4.0]);
        q.push(&Tensor::new(&[1, 1], vec![5.0]));
        assert_eq!(q.to_tensor().data(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn tensor_round_trip() {
        let mut q = NegativeQueue::new(4, 2);
        q.push(&Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        assert_eq!(NegativeQueue::from_tensor(4, &q.to_tensor()), q);
    }
}
