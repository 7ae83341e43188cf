//! One simulation run: workloads for every subscriber, the access switch and
//! the metrics collector, driven by a single event queue.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::controller::SubscriberProfile;
use crate::engine::EventQueue;
use crate::error::{ConfigError, SimError};
use crate::metrics::{MetricsCollector, MetricsReport};
use crate::shaper::{FlowTag, Packet, SubscriberId};
use crate::switch::{AccessSwitch, Action, ShapingPolicy, SwitchConfig, TransitionRecord};
use crate::traffic::{source_stream, SourceRng, TrafficConfig, VideoFrame};

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub switch: SwitchConfig,
    pub subscribers: Vec<SubscriberProfile>,
    pub traffic: TrafficConfig,
    pub policy: ShapingPolicy,
    /// Horizon, seconds.
    pub duration: f64,
    /// Samples completing before this time are not measured.
    pub warmup: f64,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.switch.validate()?;
        self.traffic.validate()?;
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(ConfigError::NonPositive("duration"));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.duration) {
            return Err(ConfigError::Invalid("warmup must lie in [0, duration)".into()));
        }
        if let ShapingPolicy::Ctbf(p) = &self.policy {
            p.validate()?;
        }
        Ok(())
    }
}

/// What to keep besides the metrics report.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub record_departures: bool,
    pub record_transitions: bool,
    /// Verify after every event that the line never idles while a packet
    /// could be sent. Costs O(subscribers) per event.
    pub check_work_conservation: bool,
}

/// A packet leaving the line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Departure {
    pub at: f64,
    pub subscriber: SubscriberId,
    pub length: u32,
    pub flow: FlowTag,
    pub message: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub events: u64,
    pub transitions: u64,
    pub max_conservation_residual: f64,
    /// Bytes serialized over the whole run, warm-up included.
    pub delivered_bytes: u64,
    pub initial_token_bytes: f64,
    pub assigned_rate_total: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub stats: RunStats,
    pub departures: Vec<Departure>,
    pub transitions: Vec<TransitionRecord>,
}

#[derive(Clone, Debug)]
enum MessageKind {
    HttpObject { request_at: f64, last_of_page: bool },
    Ftp { start_at: f64, bytes: u64 },
    Frame { deadline: f64 },
}

#[derive(Clone, Debug)]
struct Message {
    id: u64,
    kind: MessageKind,
}

struct User {
    http_rng: SourceRng,
    ftp_rng: SourceRng,
    video_rng: SourceRng,
    pending_page: u64,
    pending_file: u64,
    // Delivery is in order per subscriber, so the front message is the one
    // the next last-segment packet completes.
    outstanding: VecDeque<Message>,
    next_message: u64,
    clip: Vec<VideoFrame>,
    clip_start: f64,
    clip_next: usize,
}

pub struct Simulation {
    config: SimulationConfig,
    options: RunOptions,
    queue: EventQueue<Action>,
    switch: AccessSwitch,
    metrics: MetricsCollector,
    users: Vec<User>,
    departures: Vec<Departure>,
    delivered_total: u64,
    error: Option<SimError>,
}

impl Simulation {
    pub fn new(config: SimulationConfig, options: RunOptions) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut switch = AccessSwitch::new(config.switch.clone(), config.subscribers.clone(), config.policy, 0.0)?;
        if options.record_transitions {
            switch.record_transitions();
        }
        let mut queue = EventQueue::new();
        let traffic = &config.traffic;
        let mut users = Vec::with_capacity(config.subscribers.len());
        for p in &config.subscribers {
            let id = p.id;
            let mut user = User {
                http_rng: source_stream(config.seed, id, FlowTag::Http),
                ftp_rng: source_stream(config.seed, id, FlowTag::Ftp),
                video_rng: source_stream(config.seed, id, FlowTag::Video),
                pending_page: 0,
                pending_file: 0,
                outstanding: VecDeque::new(),
                next_message: 0,
                clip: Vec::new(),
                clip_start: 0.0,
                clip_next: 0,
            };
            if traffic.http.enabled {
                let cycle = traffic.http.next_cycle(&mut user.http_rng);
                user.pending_page = cycle.response_bytes;
                queue.schedule(cycle.think_time, Action::HttpRequest(id));
            }
            if traffic.ftp.enabled {
                let session = traffic.ftp.next_session(&mut user.ftp_rng);
                user.pending_file = session.file_bytes;
                queue.schedule(session.gap, Action::FtpStart(id));
            }
            if traffic.video.enabled {
                let gap = traffic.video.next_gap(&mut user.video_rng);
                queue.schedule(gap, Action::VideoClipStart(id));
            }
            users.push(user);
        }
        queue.schedule(config.warmup, Action::WarmupEnd);
        let metrics = MetricsCollector::new(config.subscribers.len(), config.warmup);
        Ok(Simulation {
            config,
            options,
            queue,
            switch,
            metrics,
            users,
            departures: Vec::new(),
            delivered_total: 0,
            error: None,
        })
    }

    /// Runs to the horizon and checks the end-of-run invariants.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let horizon = self.config.duration;
        let mut queue = core::mem::take(&mut self.queue);
        let events = queue.run_until(horizon, |q, at, action| {
            if self.error.is_some() {
                return;
            }
            self.handle(q, at, action);
            if self.options.check_work_conservation && self.switch.idles_with_eligible_head(at, 1e-6) {
                self.error = Some(SimError::Invariant {
                    at,
                    what: "line idle while a conformant packet waits".into(),
                });
            }
        });
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.finish(horizon);
        let stats = RunStats {
            events,
            transitions: self.switch.transitions(),
            max_conservation_residual: self.switch.max_conservation_residual(),
            delivered_bytes: self.delivered_total,
            initial_token_bytes: self.switch.shapers().iter().map(|s| s.ledger().initial).sum(),
            assigned_rate_total: self.config.subscribers.iter().map(|p| p.assigned_rate).sum(),
        };
        self.verify(horizon, &stats)?;
        let transitions = self.switch.take_transition_log();
        Ok(RunOutput {
            report: self.metrics.summarize(),
            stats,
            departures: self.departures,
            transitions,
        })
    }

    fn handle(&mut self, q: &mut EventQueue<Action>, at: f64, action: Action) {
        match action {
            Action::HttpRequest(sub) => self.start_page(sub, at, q),
            Action::FtpStart(sub) => self.start_transfer(sub, at, q),
            Action::VideoClipStart(sub) => self.start_clip(sub, at, q),
            Action::VideoFrameRelease(sub) => self.release_frame(sub, at, q),
            Action::DispatchEligible(sub) => self.switch.on_dispatch_eligible(sub, at, q),
            Action::ThresholdCrossing(sub) => self.switch.on_threshold_crossing(sub, at, q),
            Action::TxComplete => {
                let packet = self.switch.on_tx_complete(at, q);
                self.deliver(packet, at, q);
            }
            Action::WarmupEnd => {
                self.switch.accrue_all(at);
                for s in self.switch.shapers() {
                    self.metrics
                        .record_cutoff_tokens(s.id(), *s.ledger(), s.rate_bucket().tokens());
                }
            }
        }
    }

    fn send(&mut self, sub: SubscriberId, flow: FlowTag, bytes: u64, kind: MessageKind, at: f64, q: &mut EventQueue<Action>) {
        let user = &mut self.users[sub.index()];
        let id = user.next_message;
        user.next_message += 1;
        user.outstanding.push_back(Message { id, kind });
        let mtu = u64::from(self.config.switch.mtu_bytes);
        let mut left = bytes;
        while left > 0 {
            let length = left.min(mtu);
            left -= length;
            let packet = Packet {
                length: length as u32,
                subscriber: sub,
                flow,
                created_at: at,
                message: id,
                last_segment: left == 0,
            };
            if let Err(e) = self.switch.ingress(packet, at, q) {
                self.error.get_or_insert(e.into());
                return;
            }
        }
    }

    fn start_page(&mut self, sub: SubscriberId, at: f64, q: &mut EventQueue<Action>) {
        let bytes = core::mem::take(&mut self.users[sub.index()].pending_page);
        let objects = self.config.traffic.http.objects(bytes);
        let n = objects.len();
        for (k, size) in objects.into_iter().enumerate() {
            let kind = MessageKind::HttpObject {
                request_at: at,
                last_of_page: k + 1 == n,
            };
            self.send(sub, FlowTag::Http, size, kind, at, q);
        }
    }

    fn start_transfer(&mut self, sub: SubscriberId, at: f64, q: &mut EventQueue<Action>) {
        let bytes = core::mem::take(&mut self.users[sub.index()].pending_file);
        self.send(sub, FlowTag::Ftp, bytes, MessageKind::Ftp { start_at: at, bytes }, at, q);
    }

    fn start_clip(&mut self, sub: SubscriberId, at: f64, q: &mut EventQueue<Action>) {
        let user = &mut self.users[sub.index()];
        user.clip = self.config.traffic.video.video_frames(&mut user.video_rng);
        user.clip_start = at;
        user.clip_next = 0;
        let first = user.clip[0].release_at;
        q.schedule(at + first, Action::VideoFrameRelease(sub));
    }

    fn release_frame(&mut self, sub: SubscriberId, at: f64, q: &mut EventQueue<Action>) {
        let user = &mut self.users[sub.index()];
        let frame = user.clip[user.clip_next];
        let clip_start = user.clip_start;
        user.clip_next += 1;
        if let Some(next) = user.clip.get(user.clip_next) {
            q.schedule((clip_start + next.release_at).max(at), Action::VideoFrameRelease(sub));
        } else {
            let video = &self.config.traffic.video;
            let gap = video.next_gap(&mut user.video_rng);
            q.schedule(at + 1.0 / video.frame_rate + gap, Action::VideoClipStart(sub));
        }
        let kind = MessageKind::Frame {
            deadline: clip_start + frame.deadline,
        };
        self.send(sub, FlowTag::Video, u64::from(frame.size_bytes), kind, at, q);
    }

    fn deliver(&mut self, packet: Packet, at: f64, q: &mut EventQueue<Action>) {
        let sub = packet.subscriber;
        self.delivered_total += u64::from(packet.length);
        self.metrics.record_delivery(sub, at, packet.length);
        if self.options.record_departures {
            self.departures.push(Departure {
                at,
                subscriber: sub,
                length: packet.length,
                flow: packet.flow,
                message: packet.message,
            });
        }
        if !packet.last_segment {
            return;
        }
        let user = &mut self.users[sub.index()];
        let message = user.outstanding.pop_front().expect("delivered packet has an outstanding message");
        debug_assert_eq!(message.id, packet.message);
        let traffic = &self.config.traffic;
        match message.kind {
            MessageKind::HttpObject { request_at, last_of_page } => {
                if last_of_page {
                    self.metrics.record_http(sub, request_at, at);
                    let cycle = traffic.http.next_cycle(&mut user.http_rng);
                    user.pending_page = cycle.response_bytes;
                    q.schedule(at + cycle.think_time, Action::HttpRequest(sub));
                }
            }
            MessageKind::Ftp { start_at, bytes } => {
                self.metrics.record_ftp(sub, start_at, at, bytes);
                let session = traffic.ftp.next_session(&mut user.ftp_rng);
                user.pending_file = session.file_bytes;
                q.schedule(at + session.gap, Action::FtpStart(sub));
            }
            MessageKind::Frame { deadline } => {
                self.metrics.record_frame(sub, deadline, Some(at));
            }
        }
    }

    fn finish(&mut self, horizon: f64) {
        self.switch.accrue_all(horizon);
        for s in self.switch.shapers() {
            self.metrics
                .record_final_tokens(s.id(), *s.ledger(), s.rate_bucket().tokens());
        }
        // Frames still outstanding whose deadline has passed are lost.
        for (i, user) in self.users.iter().enumerate() {
            for m in &user.outstanding {
                if let MessageKind::Frame { deadline } = m.kind {
                    if deadline <= horizon {
                        self.metrics.record_frame(SubscriberId(i as u32), deadline, None);
                    }
                }
            }
        }
    }

    fn verify(&self, horizon: f64, stats: &RunStats) -> Result<(), SimError> {
        self.switch.verify_conservation(horizon)?;
        let mtu_bits = f64::from(self.config.switch.mtu_bytes) * 8.0;
        let n = self.config.subscribers.len() as f64;
        let delivered_bits = stats.delivered_bytes as f64 * 8.0;
        let bound = stats.assigned_rate_total * horizon + stats.initial_token_bytes * 8.0 + n * mtu_bits;
        if delivered_bits > bound {
            return Err(SimError::Invariant {
                at: horizon,
                what: format!("delivered {delivered_bits} bits exceeds long-term bound {bound}"),
            });
        }
        let line_bound = self.config.switch.line_rate_bps * horizon + mtu_bits;
        if delivered_bits > line_bound {
            return Err(SimError::Invariant {
                at: horizon,
                what: format!("delivered {delivered_bits} bits exceeds line capacity {line_bound}"),
            });
        }
        for s in self.switch.shapers() {
            let l = s.ledger();
            let residual = l.initial + l.generated - l.consumed - l.discarded - s.rate_bucket().tokens();
            let scale = (l.initial + l.generated).max(1.0);
            if libm::fabs(residual) / scale > 1e-9 {
                return Err(SimError::Invariant {
                    at: horizon,
                    what: format!("token ledger of subscriber {} off by {residual} B", s.id()),
                });
            }
        }
        Ok(())
    }

    pub fn switch(&self) -> &AccessSwitch {
        &self.switch
    }
}

/// Convenience wrapper: build and run one simulation.
pub fn run(config: SimulationConfig, options: RunOptions) -> Result<RunOutput, SimError> {
    Simulation::new(config, options)?.run()
}
