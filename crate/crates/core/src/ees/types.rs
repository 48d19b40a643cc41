use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Timestamp = DateTime<Utc>;

/// Closed-world string enumeration used on the wire.
pub trait Token: Sized + Copy + 'static {
    const ALL: &'static [Self];
    fn token(self) -> &'static str;
    fn from_token(s: &str) -> Option<Self>;
}

macro_rules! token_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $tok:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $crate::ees::Token for $name {
            const ALL: &'static [$name] = &[$($name::$variant),+];

            fn token(self) -> &'static str {
                match self {
                    $($name::$variant => $tok),+
                }
            }

            fn from_token(s: &str) -> Option<Self> {
                match s {
                    $($tok => Some($name::$variant),)+
                    _ => None,
                }
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.token())
            }
        }

        impl ::std::str::FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                <$name as $crate::ees::Token>::from_token(s)
                    .ok_or_else(|| format!("unknown {} token `{}`", stringify!($name), s))
            }
        }

        impl ::serde::Serialize for $name {
            fn serialize<S: ::serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.token())
            }
        }

        impl<'de> ::serde::Deserialize<'de> for $name {
            fn deserialize<D: ::serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = <String as ::serde::Deserialize>::deserialize(deserializer)?;
                s.parse().map_err(::serde::de::Error::custom)
            }
        }
    };
}
pub(crate) use token_enum;

token_enum! {
    /// Event types the UPF event exposure service can report.
    EventType {
        UserDataUsageMeasures => "USER_DATA_USAGE_MEASURES",
        UserDataUsageTrends => "USER_DATA_USAGE_TRENDS",
    }
}

token_enum! {
    MeasurementType {
        VolumeMeasurement => "VOLUME_MEASUREMENT",
        ThroughputMeasurement => "THROUGHPUT_MEASUREMENT",
    }
}

token_enum! {
    Granularity {
        PerFlow => "PER_FLOW",
        PerSession => "PER_SESSION",
    }
}

token_enum! {
    FlowDirection {
        Uplink => "UPLINK",
        Downlink => "DOWNLINK",
        Bidirectional => "BIDIRECTIONAL",
    }
}

/// Serialize a timestamp as RFC 3339 with a `Z` suffix. Sub-second digits are
/// only written when present, so whole-second stamps look like `2025-03-27T18:00:59Z`.
pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.with_timezone(&Utc))
}

pub mod rfc3339 {
    use super::*;

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_timestamp(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let raw = String::deserialize(d)?;
        parse_timestamp(&raw).ok_or_else(|| serde::de::Error::custom(format!("bad timestamp `{raw}`")))
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(ts: &Option<Timestamp>, s: S) -> Result<S::Ok, S::Error> {
            match ts {
                Some(ts) => s.serialize_str(&format_timestamp(ts)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Timestamp>, D::Error> {
            let raw = Option::<String>::deserialize(d)?;
            raw.map(|raw| {
                parse_timestamp(&raw)
                    .ok_or_else(|| serde::de::Error::custom(format!("bad timestamp `{raw}`")))
            })
            .transpose()
        }
    }
}

/// Network slice identifier. The slice differentiator is a 24-bit value
/// written as six hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SnssaiId {
    pub sst: u8,
    pub sd: Option<u32>,
}

impl SnssaiId {
    pub const SD_MAX: u32 = 0x00ff_ffff;

    pub fn new(sst: u8, sd: Option<u32>) -> Self {
        SnssaiId { sst, sd }
    }

    pub fn sd_hex(&self) -> Option<String> {
        self.sd.map(|sd| format!("{sd:06X}"))
    }

    /// Accepts five or six hex digits; five-digit values appear in sample traces.
    pub fn parse_sd(raw: &str) -> Option<u32> {
        if !(5..=6).contains(&raw.len()) || !raw.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        u32::from_str_radix(raw, 16).ok()
    }
}

impl Serialize for SnssaiId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(None)?;
        map.serialize_entry("sst", &self.sst)?;
        if let Some(sd) = self.sd_hex() {
            map.serialize_entry("sd", &sd)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for SnssaiId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            sst: u8,
            sd: Option<String>,
        }
        let raw = Raw::deserialize(d)?;
        let sd = match raw.sd {
            Some(s) => Some(
                SnssaiId::parse_sd(&s)
                    .ok_or_else(|| serde::de::Error::custom(format!("bad sd `{s}`")))?,
            ),
            None => None,
        };
        Ok(SnssaiId { sst: raw.sst, sd })
    }
}

/// Flow 4-tuple plus direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub direction: FlowDirection,
}

impl FlowKey {
    pub fn reversed(&self) -> FlowKey {
        FlowKey {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            direction: match self.direction {
                FlowDirection::Uplink => FlowDirection::Downlink,
                FlowDirection::Downlink => FlowDirection::Uplink,
                FlowDirection::Bidirectional => FlowDirection::Bidirectional,
            },
        }
    }

    /// Bidirectional key with the UE-side endpoint first.
    pub fn normalized_for(&self, ue: Ipv4Addr) -> FlowKey {
        let mut key = if self.src_ip != ue && self.dst_ip == ue { self.reversed() } else { *self };
        key.direction = FlowDirection::Bidirectional;
        key
    }

    /// The stringified packet filter carried in `flowInfo.packFiltId`.
    pub fn packet_filter_id(&self) -> String {
        serde_json::to_string(&PacketFilter::from(*self)).expect("packet filter serializes")
    }

    pub fn from_packet_filter_id(raw: &str, direction: FlowDirection) -> Option<FlowKey> {
        let pf: PacketFilter = serde_json::from_str(raw).ok()?;
        Some(FlowKey {
            src_ip: pf.src_ip,
            dst_ip: pf.dst_ip,
            src_port: pf.src_port,
            dst_port: pf.dst_port,
            direction,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
struct PacketFilter {
    src_ip: Ipv4Addr,
    dst_ip: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
}

impl From<FlowKey> for PacketFilter {
    fn from(k: FlowKey) -> Self {
        PacketFilter { src_ip: k.src_ip, dst_ip: k.dst_ip, src_port: k.src_port, dst_port: k.dst_port }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportingMode {
    pub period_seconds: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_reports: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", with = "rfc3339::option")]
    pub expiry: Option<Timestamp>,
}

impl ReportingMode {
    pub fn periodic(period_seconds: u32) -> Self {
        ReportingMode { period_seconds, max_reports: None, expiry: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EesFilters {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dnn: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snssai: Option<SnssaiId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ue_ipv4_addr: Option<Ipv4Addr>,
}

impl EesFilters {
    /// Conjunction over the provided fields; absent fields match anything.
    pub fn matches(&self, dnn: &str, snssai: &SnssaiId, ue: Ipv4Addr) -> bool {
        self.dnn.as_deref().is_none_or(|d| d == dnn)
            && self.snssai.as_ref().is_none_or(|s| s == snssai)
            && self.ue_ipv4_addr.is_none_or(|u| u == ue)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EesSubscriptionRequest {
    pub event_types: BTreeSet<EventType>,
    pub measurement_types: BTreeSet<MeasurementType>,
    pub granularity: Granularity,
    pub reporting: ReportingMode,
    pub notify_uri: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filters: Option<EesFilters>,
}

impl EesSubscriptionRequest {
    pub fn new(
        event_types: impl IntoIterator<Item = EventType>,
        measurement_types: impl IntoIterator<Item = MeasurementType>,
        granularity: Granularity,
        period_seconds: u32,
        notify_uri: impl Into<String>,
    ) -> Self {
        EesSubscriptionRequest {
            event_types: event_types.into_iter().collect(),
            measurement_types: measurement_types.into_iter().collect(),
            granularity,
            reporting: ReportingMode::periodic(period_seconds),
            notify_uri: notify_uri.into(),
            filters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EesSubscriptionResponse {
    pub subscription_id: String,
    pub accepted: EesSubscriptionRequest,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VolumeMeasurement {
    pub total_volume: u64,
    pub ul_volume: u64,
    pub dl_volume: u64,
    pub total_nb_of_packets: u64,
    pub ul_nb_of_packets: u64,
    pub dl_nb_of_packets: u64,
}

impl VolumeMeasurement {
    pub fn from_counters(ul_volume: u64, dl_volume: u64, ul_packets: u64, dl_packets: u64) -> Self {
        VolumeMeasurement {
            total_volume: ul_volume + dl_volume,
            ul_volume,
            dl_volume,
            total_nb_of_packets: ul_packets + dl_packets,
            ul_nb_of_packets: ul_packets,
            dl_nb_of_packets: dl_packets,
        }
    }

    pub fn is_additive(&self) -> bool {
        self.ul_volume.checked_add(self.dl_volume) == Some(self.total_volume)
            && self.ul_nb_of_packets.checked_add(self.dl_nb_of_packets) == Some(self.total_nb_of_packets)
    }
}

/// Bytes per second over the report window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ThroughputMeasurement {
    pub ul_throughput: f64,
    pub dl_throughput: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ThroughputStatisticsMeasurement {
    pub ul_average: f64,
    pub ul_peak: f64,
    pub dl_average: f64,
    pub dl_peak: f64,
}

impl ThroughputStatisticsMeasurement {
    pub fn is_consistent(&self) -> bool {
        let ok = |avg: f64, peak: f64| avg.is_finite() && peak.is_finite() && avg >= 0.0 && peak >= avg;
        ok(self.ul_average, self.ul_peak) && ok(self.dl_average, self.dl_peak)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FlowInfo {
    pub pack_filt_id: String,
    pub f_dir: FlowDirection,
}

impl FlowInfo {
    pub fn for_flow(key: &FlowKey) -> Self {
        FlowInfo { pack_filt_id: key.packet_filter_id(), f_dir: key.direction }
    }

    pub fn flow_key(&self) -> Option<FlowKey> {
        FlowKey::from_packet_filter_id(&self.pack_filt_id, self.f_dir)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct UsageMeasurementItem {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow_info: Option<FlowInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume_measurement: Option<VolumeMeasurement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub throughput_measurement: Option<ThroughputMeasurement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub throughput_statistics_measurement: Option<ThroughputStatisticsMeasurement>,
}

impl UsageMeasurementItem {
    pub fn has_measurement(&self) -> bool {
        self.volume_measurement.is_some()
            || self.throughput_measurement.is_some()
            || self.throughput_statistics_measurement.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EesNotification {
    pub event_type: EventType,
    pub ue_ipv4_addr: Ipv4Addr,
    pub snssai: SnssaiId,
    #[serde(with = "rfc3339")]
    pub time_stamp: Timestamp,
    #[serde(with = "rfc3339")]
    pub start_time: Timestamp,
    pub user_data_usage_measurements: Vec<UsageMeasurementItem>,
    pub subscription_id: String,
}
