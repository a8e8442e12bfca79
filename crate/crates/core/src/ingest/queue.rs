// SPDX-License-Identifier: Apache-2.0

//! Bounded FIFO shared between one producer and one consumer worker.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// Producers wait for space.
    Block,
    /// The oldest queued element is evicted to make room.
    DropOldest,
}

#[derive(Debug, PartialEq, Eq)]
pub enum PushOutcome<T> {
    Accepted,
    Dropped(T),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("queue closed")]
pub struct QueueClosed<T>(pub T);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TryPushError<T> {
    #[error("queue full")]
    Full(T),
    #[error("queue closed")]
    Closed(T),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PopError {
    #[error("timed out waiting for an item")]
    Timeout,
    #[error("queue closed and drained")]
    Closed,
}

struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    high_water: usize,
}

struct Shared<T> {
    state: Mutex<State<T>>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
    policy: OverflowPolicy,
}

pub struct BoundedQueue<T> {
    shared: Arc<Shared<T>>,
}

impl<T> Clone for BoundedQueue<T> {
    fn clone(&self) -> Self {
        Self {
            shared: Arc::clone(&self.shared),
        }
    }
}

impl<T> BoundedQueue<T> {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize, policy: OverflowPolicy) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            shared: Arc::new(Shared {
                state: Mutex::new(State {
                    items: VecDeque::with_capacity(capacity.min(1024)),
                    closed: false,
                    high_water: 0,
                }),
                not_empty: Condvar::new(),
                not_full: Condvar::new(),
                capacity,
                policy,
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State<T>> {
        self.shared.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.shared.capacity
    }

    pub fn policy(&self) -> OverflowPolicy {
        self.shared.policy
    }

    pub fn len(&self) -> usize {
        self.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity()
    }

    pub fn high_water(&self) -> usize {
        self.lock().high_water
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    /// Enqueues `item`. Under [`OverflowPolicy::Block`] this suspends the
    /// caller until space exists; under [`OverflowPolicy::DropOldest`] a full
    /// queue evicts and returns its oldest element.
    pub fn push(&self, item: T) -> Result<PushOutcome<T>, QueueClosed<T>> {
        let mut st = self.lock();
        loop {
            if st.closed {
                return Err(QueueClosed(item));
            }
            if st.items.len() < self.shared.capacity {
                return Ok(self.accept(st, item, None));
            }
            match self.shared.policy {
                OverflowPolicy::DropOldest => {
                    let evicted = st.items.pop_front();
                    return Ok(self.accept(st, item, evicted));
                }
                OverflowPolicy::Block => {
                    st = self
                        .shared
                        .not_full
                        .wait(st)
                        .unwrap_or_else(|e| e.into_inner());
                }
            }
        }
    }

    /// Non-suspending enqueue; a full `Block` queue hands the item back.
    pub fn try_push(&self, item: T) -> Result<PushOutcome<T>, TryPushError<T>> {
        let mut st = self.lock();
        if st.closed {
            return Err(TryPushError::Closed(item));
        }
        if st.items.len() < self.shared.capacity {
            return Ok(self.accept(st, item, None));
        }
        match self.shared.policy {
            OverflowPolicy::DropOldest => {
                let evicted = st.items.pop_front();
                Ok(self.accept(st, item, evicted))
            }
            OverflowPolicy::Block => Err(TryPushError::Full(item)),
        }
    }

    fn accept(&self, mut st: MutexGuard<'_, State<T>>, item: T, evicted: Option<T>) -> PushOutcome<T> {
        st.items.push_back(item);
        st.high_water = st.high_water.max(st.items.len());
        drop(st);
        self.shared.not_empty.notify_one();
        match evicted {
            Some(old) => PushOutcome::Dropped(old),
            None => PushOutcome::Accepted,
        }
    }

    pub fn try_pop(&self) -> Option<T> {
        let mut st = self.lock();
        let item = st.items.pop_front();
        drop(st);
        if item.is_some() {
            self.shared.not_full.notify_one();
        }
        item
    }

    /// Blocks until an item is available; `None` once closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut st = self.lock();
        loop {
            if let Some(item) = st.items.pop_front() {
                drop(st);
                self.shared.not_full.notify_one();
                return Some(item);
            }
            if st.closed {
                return None;
            }
            st = self
                .shared
                .not_empty
                .wait(st)
                .unwrap_or_else(|e| e.into_inner());
        }
    }

    pub fn pop_timeout(&self, timeout: Duration) -> Result<T, PopError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        loop {
            if let Some(item) = st.items.pop_front() {
                drop(st);
                self.shared.not_full.notify_one();
                return Ok(item);
            }
            if st.closed {
                return Err(PopError::Closed);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(PopError::Timeout);
            }
            st = self
                .shared
                .not_empty
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Rejects further pushes and wakes every waiter. Queued items remain
    /// poppable.
    pub fn close(&self) {
        self.lock().closed = true;
        self.shared.not_empty.notify_all();
        self.shared.not_full.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::thread;

    #[test]
    fn drop_oldest_evicts_front() {
        let q = BoundedQueue::new(2, OverflowPolicy::DropOldest);
        assert_eq!(q.push('a'), Ok(PushOutcome::Accepted));
        assert_eq!(q.push('b'), Ok(PushOutcome::Accepted));
        assert_eq!(q.push('c'), Ok(PushOutcome::Dropped('a')));
        assert_eq!(q.try_pop(), Some('b'));
        assert_eq!(q.try_pop(), Some('c'));
        assert_eq!(q.high_water(), 2);
    }

    #[test]
    fn block_suspends_until_space() {
        let q = BoundedQueue::new(1, OverflowPolicy::Block);
        q.push('a').unwrap();
        assert_eq!(q.try_push('x'), Err(TryPushError::Full('x')));
        let pushed = Arc::new(AtomicBool::new(false));
        let (q2, flag) = (q.clone(), Arc::clone(&pushed));
        let producer = thread::spawn(move || {
            q2.push('b').unwrap();
            flag.store(true, Ordering::SeqCst);
        });
        thread::sleep(Duration::from_millis(50));
        assert!(!pushed.load(Ordering::SeqCst), "second push should be suspended");
        assert_eq!(q.pop(), Some('a'));
        producer.join().unwrap();
        assert!(pushed.load(Ordering::SeqCst));
        assert_eq!(q.pop(), Some('b'));
    }

    #[test]
    fn closed_queue_rejects_and_drains() {
        let q = BoundedQueue::new(4, OverflowPolicy::Block);
        q.push(1).unwrap();
        q.close();
        assert_eq!(q.push(2), Err(QueueClosed(2)));
        assert_eq!(q.pop(), Some(1));
        assert_eq!(q.pop(), None);
        assert_eq!(q.pop_timeout(Duration::from_millis(1)), Err(PopError::Closed));
    }

    #[test]
    fn close_wakes_blocked_producer() {
        let q = BoundedQueue::new(1, OverflowPolicy::Block);
        q.push(0).unwrap();
        let q2 = q.clone();
        let h = thread::spawn(move || q2.push(1));
        thread::sleep(Duration::from_millis(20));
        q.close();
        assert_eq!(h.join().unwrap(), Err(QueueClosed(1)));
    }

    #[test]
    fn pop_timeout_expires() {
        let q: BoundedQueue<u8> = BoundedQueue::new(1, OverflowPolicy::Block);
        assert_eq!(q.pop_timeout(Duration::from_millis(5)), Err(PopError::Timeout));
    }
}
