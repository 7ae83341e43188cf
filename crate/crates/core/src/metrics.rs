//! Measurement of web page delay, FTP session throughput, decodable frame
//! rate and token waste, restricted to the window after warm-up.
//!
//! A sample belongs to the window when it completes at or after the warm-up
//! cutoff. Token counters are snapshotted at the cutoff so the window obeys
//! its own closure: opening + generated = consumed + discarded + closing.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::shaper::{SubscriberId, TokenLedger};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub count: u64,
    /// `None` without samples.
    pub mean: Option<f64>,
    /// Sample standard deviation; `None` below two samples.
    pub std_dev: Option<f64>,
}

impl Stat {
    /// Sorts before summing so the result does not depend on sample order.
    pub fn from_samples(samples: &[f64]) -> Stat {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let std_dev = (n > 1).then(|| {
            let mut sq: Vec<f64> = sorted.iter().map(|x| (x - mean) * (x - mean)).collect();
            sq.sort_by(f64::total_cmp);
            libm::sqrt(sq.iter().sum::<f64>() / (n - 1) as f64)
        });
        Stat {
            count: n as u64,
            mean: Some(mean),
            std_dev,
        }
    }
}

/// Rate-bucket token flows over the measurement window, bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub opening: f64,
    pub generated: f64,
    pub consumed: f64,
    pub discarded: f64,
    pub closing: f64,
}

impl TokenTotals {
    /// 1 - discarded / generated; 1 when nothing was generated.
    pub fn sharing_efficiency(&self) -> f64 {
        if self.generated > 0.0 {
            (1.0 - self.discarded / self.generated).clamp(0.0, 1.0)
        } else {
            1.0
        }
    }

    /// opening + generated - consumed - discarded - closing.
    pub fn closure_residual(&self) -> f64 {
        self.opening + self.generated - self.consumed - self.discarded - self.closing
    }

    fn add(&mut self, other: &TokenTotals) {
        self.opening += other.opening;
        self.generated += other.generated;
        self.consumed += other.consumed;
        self.discarded += other.discarded;
        self.closing += other.closing;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Seconds from request to the last byte of the page.
    pub http_delay: Stat,
    /// Bits per second over a whole transfer.
    pub ftp_throughput: Stat,
    pub frames_total: u64,
    pub frames_on_time: u64,
    pub tokens: TokenTotals,
    pub delivered_bytes: u64,
}

impl Summary {
    /// Fraction of frames complete by their deadline; `None` without frames.
    pub fn decodable_frame_rate(&self) -> Option<f64> {
        (self.frames_total > 0).then(|| self.frames_on_time as f64 / self.frames_total as f64)
    }

    pub fn sharing_efficiency(&self) -> f64 {
        self.tokens.sharing_efficiency()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub warmup_cutoff: f64,
    pub per_subscriber: Vec<Summary>,
    pub aggregate: Summary,
}

#[derive(Clone, Debug, Default)]
struct Samples {
    http_delays: Vec<f64>,
    ftp_throughputs: Vec<f64>,
    frames_total: u64,
    frames_on_time: u64,
    delivered_bytes: u64,
    ledger_at_cutoff: Option<(TokenLedger, f64)>,
    ledger_at_end: Option<(TokenLedger, f64)>,
}

#[derive(Clone, Debug)]
pub struct MetricsCollector {
    warmup_cutoff: f64,
    subscribers: Vec<Samples>,
}

impl MetricsCollector {
    pub fn new(subscribers: usize, warmup_cutoff: f64) -> Self {
        MetricsCollector {
            warmup_cutoff,
            subscribers: alloc::vec![Samples::default(); subscribers],
        }
    }

    pub fn warmup_cutoff(&self) -> f64 {
        self.warmup_cutoff
    }

    fn in_window(&self, at: f64) -> bool {
        at >= self.warmup_cutoff
    }

    pub fn record_http(&mut self, sub: SubscriberId, request_at: f64, completed_at: f64) {
        assert!(completed_at >= request_at, "negative page delay");
        if self.in_window(completed_at) {
            self.subscribers[sub.index()].http_delays.push(completed_at - request_at);
        }
    }

    pub fn record_ftp(&mut self, sub: SubscriberId, start_at: f64, end_at: f64, bytes: u64) {
        assert!(end_at > start_at, "non-positive transfer duration");
        if self.in_window(end_at) {
            let bps = bytes as f64 * 8.0 / (end_at - start_at);
            self.subscribers[sub.index()].ftp_throughputs.push(bps);
        }
    }

    /// `arrived_at = None` marks a frame that never completed; it is windowed
    /// by its deadline.
    pub fn record_frame(&mut self, sub: SubscriberId, deadline: f64, arrived_at: Option<f64>) {
        let at = arrived_at.unwrap_or(deadline);
        if !self.in_window(at) {
            return;
        }
        let s = &mut self.subscribers[sub.index()];
        s.frames_total += 1;
        if arrived_at.is_some_and(|t| t <= deadline) {
            s.frames_on_time += 1;
        }
    }

    pub fn record_delivery(&mut self, sub: SubscriberId, at: f64, bytes: u32) {
        if self.in_window(at) {
            self.subscribers[sub.index()].delivered_bytes += u64::from(bytes);
        }
    }

    /// Rate-bucket ledger and token level at the warm-up cutoff. The bucket
    /// must be accrued to the cutoff.
    pub fn record_cutoff_tokens(&mut self, sub: SubscriberId, ledger: TokenLedger, tokens: f64) {
        self.subscribers[sub.index()].ledger_at_cutoff = Some((ledger, tokens));
    }

    /// Rate-bucket ledger and token level at the horizon.
    pub fn record_final_tokens(&mut self, sub: SubscriberId, ledger: TokenLedger, tokens: f64) {
        self.subscribers[sub.index()].ledger_at_end = Some((ledger, tokens));
    }

    pub fn summarize(&self) -> MetricsReport {
        let per_subscriber: Vec<Summary> = self.subscribers.iter().map(summarize_one).collect();
        let http: Vec<f64> = self
            .subscribers
            .iter()
            .flat_map(|s| s.http_delays.iter().copied())
            .collect();
        let ftp: Vec<f64> = self
            .subscribers
            .iter()
            .flat_map(|s| s.ftp_throughputs.iter().copied())
            .collect();
        let mut aggregate = Summary {
            http_delay: Stat::from_samples(&http),
            ftp_throughput: Stat::from_samples(&ftp),
            ..Summary::default()
        };
        for s in &per_subscriber {
            aggregate.frames_total += s.frames_total;
            aggregate.frames_on_time += s.frames_on_time;
            aggregate.delivered_bytes += s.delivered_bytes;
            aggregate.tokens.add(&s.tokens);
        }
        MetricsReport {
            warmup_cutoff: self.warmup_cutoff,
            per_subscriber,
            aggregate,
        }
    }
}

fn summarize_one(s: &Samples) -> Summary {
    let tokens = match (s.ledger_at_cutoff, s.ledger_at_end) {
        (Some((start, opening)), Some((end, closing))) => TokenTotals {
            opening,
            generated: end.generated - start.generated,
            consumed: end.consumed - start.consumed,
            discarded: end.discarded - start.discarded,
            closing,
        },
        _ => TokenTotals::default(),
    };
    Summary {
        http_delay: Stat::from_samples(&s.http_delays),
        ftp_throughput: Stat::from_samples(&s.ftp_throughputs),
        frames_total: s.frames_total,
        frames_on_time: s.frames_on_time,
        tokens,
        delivered_bytes: s.delivered_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ftp_throughput_arithmetic() {
        let mut m = MetricsCollector::new(1, 0.0);
        m.record_ftp(SubscriberId(0), 10.0, 30.0, 5_000_000);
        let r = m.summarize();
        assert_eq!(r.aggregate.ftp_throughput.mean, Some(2e6));
    }

    #[test]
    fn frames_on_time_and_late() {
        let mut m = MetricsCollector::new(1, 0.0);
        for i in 0..10 {
            m.record_frame(SubscriberId(0), f64::from(i) + 1.0, Some(f64::from(i) + 0.5));
        }
        assert_eq!(m.summarize().aggregate.decodable_frame_rate(), Some(1.0));
        m.record_frame(SubscriberId(0), 20.0, Some(20.5));
        m.record_frame(SubscriberId(0), 21.0, None);
        let r = m.summarize();
        assert_eq!(r.aggregate.frames_total, 12);
        assert_eq!(r.aggregate.frames_on_time, 10);
    }

    #[test]
    fn warmup_excludes_early_completions() {
        let mut m = MetricsCollector::new(2, 100.0);
        m.record_http(SubscriberId(0), 90.0, 99.0);
        m.record_http(SubscriberId(0), 95.0, 101.0);
        m.record_http(SubscriberId(1), 100.0, 103.0);
        let r = m.summarize();
        assert_eq!(r.aggregate.http_delay.count, 2);
        assert_eq!(r.aggregate.http_delay.mean, Some(4.5));
        assert_eq!(r.per_subscriber[0].http_delay.mean, Some(6.0));
    }

    #[test]
    fn efficiency_without_discards_is_one() {
        let t = TokenTotals {
            generated: 100.0,
            ..TokenTotals::default()
        };
        assert_eq!(t.sharing_efficiency(), 1.0);
        assert_eq!(TokenTotals::default().sharing_efficiency(), 1.0);
    }

    #[test]
    #[should_panic(expected = "negative")]
    fn negative_delay_is_fatal() {
        MetricsCollector::new(1, 0.0).record_http(SubscriberId(0), 5.0, 4.0);
    }

    #[test]
    fn stat_std_dev() {
        let s = Stat::from_samples(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, Some(5.0));
        assert!((s.std_dev.unwrap() - libm::sqrt(32.0 / 7.0)).abs() < 1e-12);
        assert_eq!(Stat::from_samples(&[1.0]).std_dev, None);
    }
}
