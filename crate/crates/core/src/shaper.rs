//! Per-subscriber shaping: a FIFO queue drained through a rate bucket and an
//! MTU-sized peak bucket.

use alloc::collections::VecDeque;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::bucket::{Accrual, TokenBucket};
use crate::error::ConfigError;

/// Default maximum transmission unit in bytes.
pub const DEFAULT_MTU: u32 = 1500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubscriberId(pub u32);

impl fmt::Display for SubscriberId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl SubscriberId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlowTag {
    Http,
    Ftp,
    Video,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Packet {
    pub length: u32,
    pub subscriber: SubscriberId,
    pub flow: FlowTag,
    pub created_at: f64,
    /// Application message (page, file or frame) this packet belongs to.
    pub message: u64,
    /// Set on the final segment of the message.
    pub last_segment: bool,
}

/// Running token totals for a rate bucket.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenLedger {
    pub initial: f64,
    pub generated: f64,
    pub discarded: f64,
    pub consumed: f64,
}

impl TokenLedger {
    fn record(&mut self, accrual: Accrual) {
        self.generated += accrual.generated;
        self.discarded += accrual.discarded;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DispatchOutcome {
    /// Nothing queued.
    Empty,
    /// Head packet conformed to both buckets and was released.
    Sent(Packet),
    /// Head packet must wait; both buckets hold enough tokens at this time.
    Blocked { next_eligible: Option<f64> },
}

#[derive(Clone, Debug)]
pub struct SubscriberShaper {
    id: SubscriberId,
    rate_bucket: TokenBucket,
    peak_bucket: TokenBucket,
    queue: VecDeque<Packet>,
    ledger: TokenLedger,
}

impl SubscriberShaper {
    /// Both buckets start full. The peak bucket holds one MTU and refills at
    /// `peak_rate`.
    pub fn new(
        id: SubscriberId,
        rate_capacity: f64,
        fill_rate: f64,
        peak_rate: f64,
        mtu: u32,
        now: f64,
    ) -> Result<Self, ConfigError> {
        if mtu == 0 {
            return Err(ConfigError::NonPositive("MTU"));
        }
        if rate_capacity < f64::from(mtu) {
            return Err(ConfigError::Invalid(alloc::format!(
                "rate bucket of {rate_capacity} B cannot hold one MTU of {mtu} B"
            )));
        }
        if !(peak_rate > 0.0) {
            return Err(ConfigError::NonPositive("peak rate"));
        }
        let rate_bucket = TokenBucket::new(rate_capacity, fill_rate, now)?;
        let peak_bucket = TokenBucket::new(f64::from(mtu), peak_rate, now)?;
        Ok(SubscriberShaper {
            id,
            ledger: TokenLedger {
                initial: rate_capacity,
                ..TokenLedger::default()
            },
            rate_bucket,
            peak_bucket,
            queue: VecDeque::new(),
        })
    }

    pub fn id(&self) -> SubscriberId {
        self.id
    }

    pub fn rate_bucket(&self) -> &TokenBucket {
        &self.rate_bucket
    }

    pub fn peak_bucket(&self) -> &TokenBucket {
        &self.peak_bucket
    }

    pub fn ledger(&self) -> &TokenLedger {
        &self.ledger
    }

    pub fn mtu(&self) -> u32 {
        self.peak_bucket.capacity() as u32
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn head(&self) -> Option<&Packet> {
        self.queue.front()
    }

    pub fn enqueue(&mut self, packet: Packet) -> Result<(), ConfigError> {
        if packet.length == 0 || packet.length > self.mtu() {
            return Err(ConfigError::PacketLength {
                length: packet.length,
                mtu: self.mtu(),
            });
        }
        if packet.subscriber != self.id {
            return Err(ConfigError::UnknownSubscriber(packet.subscriber.0));
        }
        self.queue.push_back(packet);
        Ok(())
    }

    /// Accrues both buckets to `now`.
    pub fn accrue(&mut self, now: f64) {
        let accrual = self.rate_bucket.accrue(now);
        self.ledger.record(accrual);
        self.peak_bucket.accrue(now);
    }

    pub fn set_fill_rate(&mut self, fill_rate: f64, now: f64) {
        let accrual = self.rate_bucket.set_fill_rate(fill_rate, now);
        self.ledger.record(accrual);
        self.peak_bucket.accrue(now);
    }

    /// Whether the head packet conforms to both buckets at the last accrual.
    pub fn head_conforms(&self) -> bool {
        self.queue
            .front()
            .is_some_and(|p| self.rate_bucket.conforms(p.length) && self.peak_bucket.conforms(p.length))
    }

    /// Releases the head packet if it conforms to both buckets, otherwise
    /// reports when it will.
    pub fn try_dispatch(&mut self, now: f64) -> DispatchOutcome {
        self.accrue(now);
        let Some(head) = self.queue.front() else {
            return DispatchOutcome::Empty;
        };
        let length = head.length;
        if self.rate_bucket.conforms(length) && self.peak_bucket.conforms(length) {
            self.rate_bucket.consume(length);
            self.peak_bucket.consume(length);
            self.ledger.consumed += f64::from(length);
            return DispatchOutcome::Sent(self.queue.pop_front().expect("head present"));
        }
        let amount = f64::from(length);
        let next_eligible = match (
            self.rate_bucket.time_when_holds(amount),
            self.peak_bucket.time_when_holds(amount),
        ) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        DispatchOutcome::Blocked { next_eligible }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet(length: u32, n: u64) -> Packet {
        Packet {
            length,
            subscriber: SubscriberId(0),
            flow: FlowTag::Ftp,
            created_at: 0.0,
            message: n,
            last_segment: false,
        }
    }

    fn shaper(capacity: f64, rate: f64) -> SubscriberShaper {
        SubscriberShaper::new(SubscriberId(0), capacity, rate, 100e6, 1500, 0.0).unwrap()
    }

    #[test]
    fn dispatches_conforming_head() {
        let mut s = shaper(1e6, 2e6);
        s.enqueue(packet(1500, 0)).unwrap();
        match s.try_dispatch(0.0) {
            DispatchOutcome::Sent(p) => assert_eq!(p.length, 1500),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.rate_bucket().tokens(), 1e6 - 1500.0);
        assert_eq!(s.peak_bucket().tokens(), 0.0);
    }

    #[test]
    fn empty_queue() {
        let mut s = shaper(1e6, 2e6);
        assert_eq!(s.try_dispatch(1.0), DispatchOutcome::Empty);
    }

    #[test]
    fn blocked_on_rate_bucket_waits_six_ms() {
        let mut s = SubscriberShaper::new(SubscriberId(0), 2e6, 2e6, 100e6, 1500, 3.0).unwrap();
        s.rate_bucket = TokenBucket::with_tokens(2e6, 2e6, 0.0, 3.0).unwrap();
        s.enqueue(packet(1500, 0)).unwrap();
        match s.try_dispatch(3.0) {
            DispatchOutcome::Blocked { next_eligible: Some(t) } => {
                assert!((t - 3.006).abs() < 1e-12, "{t}")
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(s.queue_len(), 1);
    }

    #[test]
    fn rejects_oversized_and_empty_packets() {
        let mut s = shaper(1e6, 2e6);
        assert!(s.enqueue(packet(1501, 0)).is_err());
        assert!(s.enqueue(packet(0, 0)).is_err());
    }

    #[test]
    fn fifo_order() {
        let mut s = shaper(1e6, 2e6);
        for n in 0..5 {
            s.enqueue(packet(1000, n)).unwrap();
        }
        let mut t = 0.0;
        let mut seen = alloc::vec::Vec::new();
        while seen.len() < 5 {
            match s.try_dispatch(t) {
                DispatchOutcome::Sent(p) => seen.push(p.message),
                DispatchOutcome::Blocked { next_eligible } => t = next_eligible.unwrap(),
                DispatchOutcome::Empty => unreachable!(),
            }
        }
        assert_eq!(seen, [0, 1, 2, 3, 4]);
    }
}
