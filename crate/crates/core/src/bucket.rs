//! Token buckets with lazy, time-based accrual.
//!
//! A bucket holds a real-valued number of byte tokens and fills at a rate
//! expressed in bits per second. Accrual is evaluated lazily from an anchor
//! point (the last consumption or rate change), so evaluating the bucket at
//! any intermediate instant never changes its future trajectory: splitting one
//! accrual interval into many yields the same token level as a single accrual.

use crate::error::ConfigError;

/// Bits per byte.
pub const BITS_PER_BYTE: f64 = 8.0;

/// Result of bringing a bucket up to date.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accrual {
    /// Bytes generated at the fill rate over the interval.
    pub generated: f64,
    /// Bytes that overflowed the capacity and were thrown away.
    pub discarded: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenBucket {
    capacity: f64,
    fill_rate: f64,
    tokens: f64,
    last_update: f64,
    // Trajectory origin. Between anchors the level is
    // min(capacity, anchor_tokens + fill_rate / 8 * (t - anchor_time)).
    anchor_tokens: f64,
    anchor_time: f64,
}

impl TokenBucket {
    /// A full bucket of `capacity` bytes refilling at `fill_rate` bits/s.
    pub fn new(capacity: f64, fill_rate: f64, now: f64) -> Result<Self, ConfigError> {
        Self::with_tokens(capacity, fill_rate, capacity, now)
    }

    pub fn with_tokens(
        capacity: f64,
        fill_rate: f64,
        tokens: f64,
        now: f64,
    ) -> Result<Self, ConfigError> {
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(ConfigError::NonPositive("bucket capacity"));
        }
        if !(fill_rate.is_finite() && fill_rate >= 0.0) {
            return Err(ConfigError::NonPositive("bucket fill rate"));
        }
        if !(0.0..=capacity).contains(&tokens) {
            return Err(ConfigError::OutOfRange("initial tokens"));
        }
        Ok(TokenBucket {
            capacity,
            fill_rate,
            tokens,
            last_update: now,
            anchor_tokens: tokens,
            anchor_time: now,
        })
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn fill_rate(&self) -> f64 {
        self.fill_rate
    }

    /// Token level as of the last accrual.
    pub fn tokens(&self) -> f64 {
        self.tokens
    }

    pub fn last_update(&self) -> f64 {
        self.last_update
    }

    fn unclamped_at(&self, t: f64) -> f64 {
        self.anchor_tokens + self.fill_rate / BITS_PER_BYTE * (t - self.anchor_time)
    }

    fn overflow_at(&self, t: f64) -> f64 {
        (self.unclamped_at(t) - self.capacity).max(0.0)
    }

    /// Brings the bucket forward to `now`, clamping at capacity.
    ///
    /// Panics if `now` is earlier than the last update: the simulation clock
    /// never runs backwards.
    pub fn accrue(&mut self, now: f64) -> Accrual {
        assert!(
            now >= self.last_update,
            "simulation clock violation: accrue at {now} after update at {}",
            self.last_update
        );
        if now == self.last_update {
            return Accrual::default();
        }
        let discarded = self.overflow_at(now) - self.overflow_at(self.last_update);
        let generated = self.fill_rate / BITS_PER_BYTE * (now - self.last_update);
        self.tokens = self.unclamped_at(now).min(self.capacity);
        self.last_update = now;
        Accrual {
            generated,
            discarded,
        }
    }

    /// Whether a packet of `length` bytes fits in the current token level.
    /// Does not accrue.
    pub fn conforms(&self, length: u32) -> bool {
        f64::from(length) <= self.tokens
    }

    /// Removes `length` bytes of tokens.
    ///
    /// Panics if the packet does not conform; callers check first.
    pub fn consume(&mut self, length: u32) {
        assert!(
            self.conforms(length),
            "consume of {length} B from bucket holding {} B",
            self.tokens
        );
        self.tokens -= f64::from(length);
        self.reanchor();
    }

    /// Installs a new fill rate from `now` onwards. Tokens are accrued at the
    /// old rate up to `now` first. Setting the current rate again is a no-op.
    pub fn set_fill_rate(&mut self, fill_rate: f64, now: f64) -> Accrual {
        assert!(fill_rate.is_finite() && fill_rate >= 0.0, "fill rate {fill_rate}");
        let accrual = self.accrue(now);
        if fill_rate != self.fill_rate {
            self.fill_rate = fill_rate;
            self.reanchor();
        }
        accrual
    }

    fn reanchor(&mut self) {
        self.anchor_tokens = self.tokens;
        self.anchor_time = self.last_update;
    }

    /// Earliest absolute time at which the bucket holds at least `amount`
    /// bytes, or `None` if it never will (amount above capacity, or no fill).
    /// Accruing to the returned time is guaranteed to reach `amount`.
    pub fn time_when_holds(&self, amount: f64) -> Option<f64> {
        if amount <= self.tokens {
            return Some(self.last_update);
        }
        if amount > self.capacity || self.fill_rate <= 0.0 {
            return None;
        }
        let mut at = (self.anchor_time + (amount - self.anchor_tokens) * BITS_PER_BYTE / self.fill_rate)
            .max(self.last_update);
        // Step past rounding so that accruing to `at` really yields `amount`.
        while self.unclamped_at(at) < amount {
            at = at.next_up();
        }
        Some(at)
    }
}

/// Bucket size in bytes for an assigned rate and a bits-per-bps multiplier.
pub fn bucket_capacity(assigned_rate: f64, multiplier: f64) -> Result<f64, ConfigError> {
    if !(assigned_rate.is_finite() && assigned_rate > 0.0) {
        return Err(ConfigError::NonPositive("assigned rate"));
    }
    if !(multiplier.is_finite() && multiplier > 0.0) {
        return Err(ConfigError::NonPositive("bucket multiplier"));
    }
    Ok(assigned_rate * multiplier / BITS_PER_BYTE)
}
