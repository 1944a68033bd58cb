use std::collections::VecDeque;

pub const DEFAULT_QUEUE_CAPACITY: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueResult {
    Accepted,
    DroppedFull,
}

/// Bounded FIFO with tail drop.
#[derive(Debug, Clone)]
pub struct TxQueue<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> TxQueue<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity.min(1024)),
            capacity,
        }
    }

    pub fn enqueue(&mut self, item: T) -> EnqueueResult {
        if self.items.len() >= self.capacity {
            return EnqueueResult::DroppedFull;
        }
        self.items.push_back(item);
        EnqueueResult::Accepted
    }

    pub fn front(&self) -> Option<&T> {
        self.items.front()
    }

    pub fn pop_front(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

impl<T> Default for TxQueue<T> {
    fn default() -> Self {
        Self::new(DEFAULT_QUEUE_CAPACITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_until_full() {
        let mut q = TxQueue::default();
        assert_eq!(q.enqueue(0), EnqueueResult::Accepted);
        for i in 1..500 {
            assert_eq!(q.enqueue(i), EnqueueResult::Accepted);
        }
        assert_eq!(q.len(), 500);
        assert_eq!(q.enqueue(500), EnqueueResult::DroppedFull);
        assert_eq!(q.pop_front(), Some(0));
        assert_eq!(q.enqueue(501), EnqueueResult::Accepted);
        let order: Vec<_> = std::iter::from_fn(|| q.pop_front()).collect();
        assert_eq!(order.first(), Some(&1));
        assert_eq!(order.last(), Some(&501));
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }
}
