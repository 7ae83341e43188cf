//! Downstream workloads for one user per subscriber: web browsing, bulk FTP
//! transfers and VBR video clips.
//!
//! Every (subscriber, source) pair draws from its own ChaCha stream seeded
//! from the run's master seed, so the draws a subscriber sees do not depend
//! on how many other subscribers exist or on the shaping policy in force.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::shaper::{FlowTag, SubscriberId};

pub type SourceRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent random stream for one traffic source of one subscriber.
pub fn source_stream(master_seed: u64, subscriber: SubscriberId, source: FlowTag) -> SourceRng {
    let tag = match source {
        FlowTag::Http => 1,
        FlowTag::Ftp => 2,
        FlowTag::Video => 3,
    };
    let seed = splitmix64(splitmix64(master_seed) ^ splitmix64(u64::from(subscriber.0) << 8 | tag));
    ChaCha8Rng::seed_from_u64(seed)
}

fn exp_draw(mean: f64, rng: &mut SourceRng) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Exp::new(1.0 / mean).expect("positive rate").sample(rng)
}

fn lognormal_draw(median: f64, sigma: f64, rng: &mut SourceRng) -> f64 {
    if sigma == 0.0 {
        return median;
    }
    LogNormal::new(libm::log(median), sigma)
        .expect("finite lognormal parameters")
        .sample(rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpModel {
    pub enabled: bool,
    /// Mean of the exponential pause between a page arriving and the next request.
    pub think_time_mean_s: f64,
    pub page_size_median_bytes: f64,
    /// Log-space standard deviation of the page size.
    pub page_size_sigma: f64,
    /// The page is split evenly into this many objects.
    pub objects_per_page: u32,
}

impl Default for HttpModel {
    fn default() -> Self {
        HttpModel {
            enabled: true,
            think_time_mean_s: 10.0,
            page_size_median_bytes: 320_000.0,
            page_size_sigma: 1.0,
            objects_per_page: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HttpCycle {
    /// Delay from the previous page completing (or from start) to the request.
    pub think_time: f64,
    pub response_bytes: u64,
}

impl HttpModel {
    pub fn next_cycle(&self, rng: &mut SourceRng) -> HttpCycle {
        let think_time = exp_draw(self.think_time_mean_s, rng);
        let size = lognormal_draw(self.page_size_median_bytes, self.page_size_sigma, rng);
        HttpCycle {
            think_time,
            response_bytes: (libm::round(size) as u64).max(1),
        }
    }

    /// Object sizes of a page; they sum to `bytes`.
    pub fn objects(&self, bytes: u64) -> Vec<u64> {
        let n = u64::from(self.objects_per_page.max(1)).min(bytes);
        (0..n).map(|i| bytes / n + u64::from(i < bytes % n)).collect()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.think_time_mean_s < 0.0 {
            return Err(ConfigError::OutOfRange("http.think_time_mean_s"));
        }
        if !(self.page_size_median_bytes >= 1.0) {
            return Err(ConfigError::NonPositive("http.page_size_median_bytes"));
        }
        if !(self.page_size_sigma >= 0.0) {
            return Err(ConfigError::OutOfRange("http.page_size_sigma"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FtpModel {
    pub enabled: bool,
    pub file_size_bytes: u64,
    /// Mean of the exponential pause between one transfer finishing and the next starting.
    pub gap_mean_s: f64,
}

impl Default for FtpModel {
    fn default() -> Self {
        FtpModel {
            enabled: true,
            file_size_bytes: 5_000_000,
            gap_mean_s: 60.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FtpSession {
    pub gap: f64,
    pub file_bytes: u64,
}

impl FtpModel {
    pub fn next_session(&self, rng: &mut SourceRng) -> FtpSession {
        FtpSession {
            gap: exp_draw(self.gap_mean_s, rng),
            file_bytes: self.file_size_bytes,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.file_size_bytes == 0 {
            return Err(ConfigError::NonPositive("ftp.file_size_bytes"));
        }
        if self.gap_mean_s < 0.0 {
            return Err(ConfigError::OutOfRange("ftp.gap_mean_s"));
        }
        Ok(())
    }
}

/// One frame of a clip, times relative to the clip start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoFrame {
    pub index: u32,
    pub size_bytes: u32,
    /// When the server sends the frame.
    pub release_at: f64,
    /// Playout deadline; a frame completing later is undecodable.
    pub deadline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoModel {
    pub enabled: bool,
    pub frame_rate: f64,
    pub mean_rate_bps: f64,
    /// Log-space standard deviation of frame sizes.
    pub frame_size_sigma: f64,
    pub playout_buffer_s: f64,
    pub clip_duration_s: f64,
    /// Mean of the exponential pause between clips.
    pub gap_mean_s: f64,
    /// Recorded frame list replacing the synthetic clip when present.
    #[serde(skip)]
    pub trace: Option<Vec<VideoFrame>>,
}

impl Default for VideoModel {
    fn default() -> Self {
        VideoModel {
            enabled: true,
            frame_rate: 25.0,
            mean_rate_bps: 2e6,
            frame_size_sigma: 0.5,
            playout_buffer_s: 5.0,
            clip_duration_s: 60.0,
            gap_mean_s: 240.0,
            trace: None,
        }
    }
}

impl VideoModel {
    /// Frames of the next clip, release times strictly increasing.
    pub fn video_frames(&self, rng: &mut SourceRng) -> Vec<VideoFrame> {
        if let Some(trace) = &self.trace {
            return trace.clone();
        }
        let count = libm::round(self.clip_duration_s * self.frame_rate) as u32;
        let mean_bytes = self.mean_rate_bps / 8.0 / self.frame_rate;
        // Median chosen so the lognormal mean equals `mean_bytes`.
        let median = mean_bytes * libm::exp(-self.frame_size_sigma * self.frame_size_sigma / 2.0);
        (0..count)
            .map(|index| {
                let release_at = f64::from(index) / self.frame_rate;
                let size = lognormal_draw(median, self.frame_size_sigma, rng);
                VideoFrame {
                    index,
                    size_bytes: (libm::round(size) as u32).max(1),
                    release_at,
                    deadline: release_at + self.playout_buffer_s,
                }
            })
            .collect()
    }

    pub fn next_gap(&self, rng: &mut SourceRng) -> f64 {
        exp_draw(self.gap_mean_s, rng)
    }

    /// Builds clip frames from `(index, size_bytes, deadline_s)` records.
    /// Release times are the deadlines less the playout buffer.
    pub fn frames_from_trace(
        &self,
        records: &[(u32, u32, f64)],
    ) -> Result<Vec<VideoFrame>, ConfigError> {
        let mut frames = Vec::with_capacity(records.len());
        let mut last = f64::NEG_INFINITY;
        for &(index, size_bytes, deadline) in records {
            if size_bytes == 0 {
                return Err(ConfigError::Invalid(alloc::format!("frame {index} has zero size")));
            }
            if !(deadline > last) {
                return Err(ConfigError::Invalid(alloc::format!(
                    "frame {index} deadline {deadline} is not after the previous one"
                )));
            }
            last = deadline;
            frames.push(VideoFrame {
                index,
                size_bytes,
                release_at: (deadline - self.playout_buffer_s).max(0.0),
                deadline,
            });
        }
        Ok(frames)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.frame_rate > 0.0) {
            return Err(ConfigError::NonPositive("video.frame_rate"));
        }
        if !(self.mean_rate_bps > 0.0) {
            return Err(ConfigError::NonPositive("video.mean_rate_bps"));
        }
        if !(self.frame_size_sigma >= 0.0) {
            return Err(ConfigError::OutOfRange("video.frame_size_sigma"));
        }
        if self.playout_buffer_s < 0.0 {
            return Err(ConfigError::OutOfRange("video.playout_buffer_s"));
        }
        if !(self.clip_duration_s > 0.0) {
            return Err(ConfigError::NonPositive("video.clip_duration_s"));
        }
        if self.gap_mean_s < 0.0 {
            return Err(ConfigError::OutOfRange("video.gap_mean_s"));
        }
        if self.trace.as_ref().is_some_and(|t| t.is_empty()) {
            return Err(ConfigError::Invalid("video trace is empty".into()));
        }
        Ok(())
    }
}

/// Workload of the single user behind each subscriber.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub http: HttpModel,
    pub ftp: FtpModel,
    pub video: VideoModel,
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.http.validate()?;
        self.ftp.validate()?;
        self.video.validate()
    }
}
