use std::collections::VecDeque;

use crate::machine::TaskId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueueId(pub u32);

/// A bounded FIFO of fixed-size byte records.
///
/// A sender blocked on a full queue parks its item in its wait record; the
/// receiver that frees a slot moves that item into the buffer, so blocked
/// senders complete in FIFO order without retrying.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageQueue {
    capacity: usize,
    item_size: usize,
    pub(super) buffer: VecDeque<Vec<u8>>,
    pub(super) senders_blocked: VecDeque<TaskId>,
    pub(super) receivers_blocked: VecDeque<TaskId>,
    pub(super) sent: u64,
    pub(super) received: u64,
}

impl MessageQueue {
    pub(super) fn new(capacity: usize, item_size: usize) -> Self {
        MessageQueue {
            capacity,
            item_size,
            buffer: VecDeque::with_capacity(capacity),
            senders_blocked: VecDeque::new(),
            receivers_blocked: VecDeque::new(),
            sent: 0,
            received: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn item_size(&self) -> usize {
        self.item_size
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buffer.len() == self.capacity
    }

    /// Items that completed a send, including ones handed straight to a
    /// waiting receiver.
    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn received(&self) -> u64 {
        self.received
    }

    pub fn senders_blocked(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.senders_blocked.iter().copied()
    }

    pub fn receivers_blocked(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.receivers_blocked.iter().copied()
    }

    pub(super) fn forget(&mut self, task: TaskId) {
        self.senders_blocked.retain(|&t| t != task);
        self.receivers_blocked.retain(|&t| t != task);
    }
}
