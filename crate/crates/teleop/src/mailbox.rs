//! Single-slot, last-writer-wins mailbox between network tasks and the
//! control loop. Neither side ever waits on the other for longer than a
//! pointer swap.

use std::sync::Mutex;

#[derive(Debug, Default)]
pub struct Mailbox<T> {
    slot: Mutex<Option<T>>,
}

impl<T> Mailbox<T> {
    pub fn new() -> Self {
        Self { slot: Mutex::new(None) }
    }

    /// Stores `value`, replacing any unread one. Returns true if a value was
    /// overwritten.
    pub fn put(&self, value: T) -> bool {
        self.lock().replace(value).is_some()
    }

    /// Removes and returns the latest value.
    pub fn take(&self) -> Option<T> {
        self.lock().take()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Option<T>> {
        // A panic while holding the lock cannot leave an Option half-written.
        self.slot.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn last_writer_wins() {
        let m = Mailbox::new();
        assert_eq!(m.take(), None::<u32>);
        assert!(!m.put(1));
        assert!(m.put(2));
        assert_eq!(m.take(), Some(2));
        assert_eq!(m.take(), None);
    }

    #[test]
    fn concurrent_writers_leave_one_value() {
        let m = Arc::new(Mailbox::new());
        let handles: Vec<_> = (0..4)
            .map(|k| {
                let m = m.clone();
                std::thread::spawn(move || {
                    for i in 0..1000 {
                        m.put(k * 1000 + i);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let last = m.take().unwrap();
        assert_eq!(last % 1000, 999);
        assert_eq!(m.take(), None);
    }
}
