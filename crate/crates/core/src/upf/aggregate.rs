//! Per-packet counters and the deferred measurement computation done at
//! report time.

use std::collections::{BTreeSet, VecDeque};
use std::time::Duration;

use crate::ees::{
    FlowInfo, FlowKey, Granularity, MeasurementType, ThroughputMeasurement, ThroughputStatisticsMeasurement,
    Timestamp, UsageMeasurementItem, VolumeMeasurement,
};

/// Number of report windows a trend report looks back over.
pub const TREND_WINDOWS: usize = 3;

/// Identifies one aggregate: subscription handle, PDU session and normalized flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AggregateKey {
    pub subscription: u64,
    pub pdu_session_id: u32,
    pub flow: FlowKey,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SecondBucket {
    pub ul_bytes: u64,
    pub dl_bytes: u64,
}

/// Compact summary of one closed report window, kept for trend reports.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WindowSummary {
    pub ul_bytes: u64,
    pub dl_bytes: u64,
    pub seconds: u32,
    pub ul_peak: u64,
    pub dl_peak: u64,
}

/// Running counters for one aggregate during the current report window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregateRecord {
    pub ul_bytes: u64,
    pub dl_bytes: u64,
    pub ul_packets: u64,
    pub dl_packets: u64,
    /// Indexed by whole seconds since the window start; late packets fold into the last slot.
    pub per_second: Vec<SecondBucket>,
    pub first_seen: Option<Timestamp>,
    pub last_seen: Option<Timestamp>,
    pub history: VecDeque<WindowSummary>,
}

impl AggregateRecord {
    pub fn with_buckets(len: usize) -> Self {
        AggregateRecord { per_second: vec![SecondBucket::default(); len.max(1)], ..Default::default() }
    }

    #[inline]
    pub fn add(&mut self, uplink: bool, size: u64, second: usize, now: Timestamp) {
        let idx = second.min(self.per_second.len() - 1);
        let bucket = &mut self.per_second[idx];
        if uplink {
            self.ul_bytes += size;
            self.ul_packets += 1;
            bucket.ul_bytes += size;
        } else {
            self.dl_bytes += size;
            self.dl_packets += 1;
            bucket.dl_bytes += size;
        }
        if self.first_seen.is_none() {
            self.first_seen = Some(now);
        }
        self.last_seen = Some(now);
    }

    pub fn packets(&self) -> u64 {
        self.ul_packets + self.dl_packets
    }

    pub fn has_traffic(&self) -> bool {
        self.packets() > 0
    }

    /// Field-wise sum, bucket by bucket.
    pub fn merge(&mut self, other: &AggregateRecord) {
        self.ul_bytes += other.ul_bytes;
        self.dl_bytes += other.dl_bytes;
        self.ul_packets += other.ul_packets;
        self.dl_packets += other.dl_packets;
        if self.per_second.len() < other.per_second.len() {
            self.per_second.resize(other.per_second.len(), SecondBucket::default());
        }
        for (mine, theirs) in self.per_second.iter_mut().zip(&other.per_second) {
            mine.ul_bytes += theirs.ul_bytes;
            mine.dl_bytes += theirs.dl_bytes;
        }
        self.first_seen = match (self.first_seen, other.first_seen) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.last_seen = match (self.last_seen, other.last_seen) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
    }

    pub fn summary(&self, window: Duration) -> WindowSummary {
        WindowSummary {
            ul_bytes: self.ul_bytes,
            dl_bytes: self.dl_bytes,
            seconds: window_seconds(window, self.per_second.len()),
            ul_peak: self.per_second.iter().map(|b| b.ul_bytes).max().unwrap_or(0),
            dl_peak: self.per_second.iter().map(|b| b.dl_bytes).max().unwrap_or(0),
        }
    }

    /// Closes the window: pushes its summary into the trend history and zeroes the counters.
    pub fn close_window(&mut self, window: Duration) {
        let summary = self.summary(window);
        self.history.push_back(summary);
        while self.history.len() > TREND_WINDOWS {
            self.history.pop_front();
        }
        self.reset();
    }

    pub fn reset(&mut self) {
        self.ul_bytes = 0;
        self.dl_bytes = 0;
        self.ul_packets = 0;
        self.dl_packets = 0;
        self.per_second.iter_mut().for_each(|b| *b = SecondBucket::default());
        self.first_seen = None;
        self.last_seen = None;
    }

    /// True when none of the retained windows saw traffic.
    pub fn is_stale(&self) -> bool {
        !self.has_traffic() && self.history.iter().all(|w| w.ul_bytes == 0 && w.dl_bytes == 0)
    }
}

/// Number of per-second samples covering `window`, at least one.
fn window_seconds(window: Duration, buckets: usize) -> u32 {
    let secs = window.as_secs() + u64::from(window.subsec_nanos() > 0);
    secs.clamp(1, buckets.max(1) as u64) as u32
}

fn per_second(bytes: u64, window: Duration) -> f64 {
    let secs = window.as_secs_f64();
    if secs > 0.0 {
        bytes as f64 / secs
    } else {
        0.0
    }
}

pub fn window_statistics(rec: &AggregateRecord, window: Duration) -> ThroughputStatisticsMeasurement {
    let s = rec.summary(window);
    let n = f64::from(s.seconds);
    ThroughputStatisticsMeasurement {
        ul_average: s.ul_bytes as f64 / n,
        ul_peak: s.ul_peak as f64,
        dl_average: s.dl_bytes as f64 / n,
        dl_peak: s.dl_peak as f64,
    }
}

/// Average and peak over the retained window summaries.
pub fn trend_statistics(history: &VecDeque<WindowSummary>) -> ThroughputStatisticsMeasurement {
    let seconds: u64 = history.iter().map(|w| u64::from(w.seconds)).sum();
    if seconds == 0 {
        return ThroughputStatisticsMeasurement::default();
    }
    let n = seconds as f64;
    let ul: u64 = history.iter().map(|w| w.ul_bytes).sum();
    let dl: u64 = history.iter().map(|w| w.dl_bytes).sum();
    ThroughputStatisticsMeasurement {
        ul_average: ul as f64 / n,
        ul_peak: history.iter().map(|w| w.ul_peak).max().unwrap_or(0) as f64,
        dl_average: dl as f64 / n,
        dl_peak: history.iter().map(|w| w.dl_peak).max().unwrap_or(0) as f64,
    }
}

/// Builds one measurement item from the counters gathered during a window.
///
/// Only the requested measurement types are populated. Throughput requests
/// also carry average/peak statistics over the per-second samples. For
/// `PER_SESSION` pass the merged record of the session and no flow.
pub fn compute_measurements(
    rec: &AggregateRecord,
    window: Duration,
    granularity: Granularity,
    requested: &BTreeSet<MeasurementType>,
    flow: Option<&FlowKey>,
) -> UsageMeasurementItem {
    let mut item = UsageMeasurementItem {
        flow_info: match granularity {
            Granularity::PerFlow => flow.map(FlowInfo::for_flow),
            Granularity::PerSession => None,
        },
        ..Default::default()
    };
    if requested.contains(&MeasurementType::VolumeMeasurement) {
        item.volume_measurement =
            Some(VolumeMeasurement::from_counters(rec.ul_bytes, rec.dl_bytes, rec.ul_packets, rec.dl_packets));
    }
    if requested.contains(&MeasurementType::ThroughputMeasurement) {
        item.throughput_measurement = Some(ThroughputMeasurement {
            ul_throughput: per_second(rec.ul_bytes, window),
            dl_throughput: per_second(rec.dl_bytes, window),
        });
        item.throughput_statistics_measurement = Some(window_statistics(rec, window));
    }
    item
}
