//! Strict JSON codec for the event-exposure messages.
//!
//! Decoding goes through `serde_json::Value` and a small path-tracking reader
//! so every rejection names the offending field. Unknown fields are ignored;
//! unknown enumeration tokens inside known fields are rejected.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use serde_json::{Map, Value};
use thiserror::Error;

use super::types::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("schema violation at `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("unknown token `{token}` in `{field}`")]
    UnknownEnumToken { field: String, token: String },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

impl CodecError {
    pub fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CodecError::SchemaViolation { field: field.into(), reason: reason.into() }
    }

    /// Field the error refers to, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            CodecError::SchemaViolation { field, .. } | CodecError::UnknownEnumToken { field, .. } => {
                Some(field)
            }
            _ => None,
        }
    }
}

pub type CodecResult<T> = Result<T, CodecError>;

pub fn parse_json(raw: &[u8]) -> CodecResult<Value> {
    let text = std::str::from_utf8(raw).map_err(|e| CodecError::MalformedJson(e.to_string()))?;
    serde_json::from_str(text).map_err(|e| CodecError::MalformedJson(e.to_string()))
}

/// Object view that remembers where it sits in the document.
pub(crate) struct Obj<'a> {
    map: &'a Map<String, Value>,
    path: String,
}

impl<'a> Obj<'a> {
    pub(crate) fn root(v: &'a Value) -> CodecResult<Self> {
        Self::at(v, String::new())
    }

    fn at(v: &'a Value, path: String) -> CodecResult<Self> {
        match v {
            Value::Object(map) => Ok(Obj { map, path }),
            _ => Err(CodecError::schema(display_path(&path), "expected object")),
        }
    }

    pub(crate) fn path(&self, name: &str) -> String {
        if self.path.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.path, name)
        }
    }

    /// Missing and explicit `null` are both treated as absent.
    pub(crate) fn get(&self, name: &str) -> Option<&'a Value> {
        self.map.get(name).filter(|v| !v.is_null())
    }

    pub(crate) fn req(&self, name: &str) -> CodecResult<&'a Value> {
        self.get(name).ok_or_else(|| CodecError::schema(self.path(name), "missing field"))
    }

    pub(crate) fn str(&self, name: &str) -> CodecResult<&'a str> {
        as_str(self.req(name)?, &self.path(name))
    }

    pub(crate) fn opt_str(&self, name: &str) -> CodecResult<Option<&'a str>> {
        self.get(name).map(|v| as_str(v, &self.path(name))).transpose()
    }

    pub(crate) fn u64(&self, name: &str) -> CodecResult<u64> {
        as_u64(self.req(name)?, &self.path(name))
    }

    pub(crate) fn opt_u64(&self, name: &str) -> CodecResult<Option<u64>> {
        self.get(name).map(|v| as_u64(v, &self.path(name))).transpose()
    }

    pub(crate) fn f64(&self, name: &str) -> CodecResult<f64> {
        let v = self.req(name)?;
        let f = v
            .as_f64()
            .filter(|f| f.is_finite())
            .ok_or_else(|| CodecError::schema(self.path(name), "expected finite number"))?;
        if f < 0.0 {
            return Err(CodecError::schema(self.path(name), "must be non-negative"));
        }
        Ok(f)
    }

    pub(crate) fn obj(&self, name: &str) -> CodecResult<Obj<'a>> {
        Obj::at(self.req(name)?, self.path(name))
    }

    pub(crate) fn opt_obj(&self, name: &str) -> CodecResult<Option<Obj<'a>>> {
        self.get(name).map(|v| Obj::at(v, self.path(name))).transpose()
    }

    pub(crate) fn array(&self, name: &str) -> CodecResult<&'a Vec<Value>> {
        match self.req(name)? {
            Value::Array(items) => Ok(items),
            _ => Err(CodecError::schema(self.path(name), "expected array")),
        }
    }

    pub(crate) fn opt_array(&self, name: &str) -> CodecResult<Option<&'a Vec<Value>>> {
        match self.get(name) {
            None => Ok(None),
            Some(Value::Array(items)) => Ok(Some(items)),
            Some(_) => Err(CodecError::schema(self.path(name), "expected array")),
        }
    }

    pub(crate) fn element(&self, name: &str, idx: usize, v: &'a Value) -> CodecResult<Obj<'a>> {
        Obj::at(v, format!("{}[{}]", self.path(name), idx))
    }

    pub(crate) fn token<T: Token>(&self, name: &str) -> CodecResult<T> {
        token_value(self.req(name)?, &self.path(name))
    }

    pub(crate) fn token_set<T: Token + Ord>(&self, name: &str) -> CodecResult<BTreeSet<T>> {
        let items = self.array(name)?;
        items
            .iter()
            .enumerate()
            .map(|(i, v)| token_value(v, &format!("{}[{}]", self.path(name), i)))
            .collect()
    }

    pub(crate) fn ipv4(&self, name: &str) -> CodecResult<Ipv4Addr> {
        parse_ipv4(self.str(name)?, &self.path(name))
    }

    pub(crate) fn timestamp(&self, name: &str) -> CodecResult<Timestamp> {
        let raw = self.str(name)?;
        parse_timestamp(raw).ok_or_else(|| CodecError::schema(self.path(name), "expected RFC 3339 timestamp"))
    }

    pub(crate) fn opt_timestamp(&self, name: &str) -> CodecResult<Option<Timestamp>> {
        match self.opt_str(name)? {
            None => Ok(None),
            Some(raw) => parse_timestamp(raw)
                .map(Some)
                .ok_or_else(|| CodecError::schema(self.path(name), "expected RFC 3339 timestamp")),
        }
    }
}

fn display_path(path: &str) -> &str {
    if path.is_empty() {
        "$"
    } else {
        path
    }
}

fn as_str<'a>(v: &'a Value, path: &str) -> CodecResult<&'a str> {
    v.as_str().ok_or_else(|| CodecError::schema(path, "expected string"))
}

fn as_u64(v: &Value, path: &str) -> CodecResult<u64> {
    v.as_u64().ok_or_else(|| CodecError::schema(path, "expected non-negative integer"))
}

pub(crate) fn token_value<T: Token>(v: &Value, path: &str) -> CodecResult<T> {
    let raw = as_str(v, path)?;
    T::from_token(raw).ok_or_else(|| CodecError::UnknownEnumToken { field: path.to_string(), token: raw.to_string() })
}

pub(crate) fn parse_ipv4(raw: &str, path: &str) -> CodecResult<Ipv4Addr> {
    raw.parse().map_err(|_| CodecError::schema(path, format!("`{raw}` is not a dotted-quad IPv4 address")))
}

pub fn check_notify_uri(raw: &str, path: &str) -> CodecResult<()> {
    let url = url::Url::parse(raw).map_err(|e| CodecError::schema(path, format!("invalid URI: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") || !url.has_host() {
        return Err(CodecError::schema(path, "expected absolute http URI"));
    }
    Ok(())
}

fn small_positive(obj: &Obj<'_>, name: &str, v: u64) -> CodecResult<u32> {
    if v == 0 {
        return Err(CodecError::schema(obj.path(name), "must be >= 1"));
    }
    u32::try_from(v).map_err(|_| CodecError::schema(obj.path(name), "out of range"))
}

fn decode_snssai(o: &Obj<'_>) -> CodecResult<SnssaiId> {
    let sst = o.u64("sst")?;
    let sst = u8::try_from(sst).map_err(|_| CodecError::schema(o.path("sst"), "must be 0..=255"))?;
    let sd = match o.opt_str("sd")? {
        None => None,
        Some(raw) => Some(
            SnssaiId::parse_sd(raw)
                .ok_or_else(|| CodecError::schema(o.path("sd"), "expected 5 or 6 hex digits"))?,
        ),
    };
    Ok(SnssaiId { sst, sd })
}

fn decode_reporting(o: &Obj<'_>) -> CodecResult<ReportingMode> {
    let period_seconds = small_positive(o, "periodSeconds", o.u64("periodSeconds")?)?;
    let max_reports = o.opt_u64("maxReports")?.map(|v| small_positive(o, "maxReports", v)).transpose()?;
    let expiry = o.opt_timestamp("expiry")?;
    Ok(ReportingMode { period_seconds, max_reports, expiry })
}

fn decode_filters(o: &Obj<'_>) -> CodecResult<EesFilters> {
    let dnn = o.opt_str("dnn")?.map(str::to_string);
    let snssai = o.opt_obj("snssai")?.map(|s| decode_snssai(&s)).transpose()?;
    let ue_ipv4_addr = o.opt_str("ueIpv4Addr")?.map(|raw| parse_ipv4(raw, &o.path("ueIpv4Addr"))).transpose()?;
    Ok(EesFilters { dnn, snssai, ue_ipv4_addr })
}

pub(crate) fn decode_request_obj(o: &Obj<'_>) -> CodecResult<EesSubscriptionRequest> {
    let event_types: BTreeSet<EventType> = o.token_set("eventTypes")?;
    if event_types.is_empty() {
        return Err(CodecError::schema(o.path("eventTypes"), "must not be empty"));
    }
    let measurement_types = match o.get("measurementTypes") {
        None => BTreeSet::new(),
        Some(_) => o.token_set("measurementTypes")?,
    };
    let granularity = o.token("granularity")?;
    let reporting = decode_reporting(&o.obj("reporting")?)?;
    let notify_uri = o.str("notifyUri")?;
    check_notify_uri(notify_uri, &o.path("notifyUri"))?;
    let filters = o.opt_obj("filters")?.map(|f| decode_filters(&f)).transpose()?;
    Ok(EesSubscriptionRequest {
        event_types,
        measurement_types,
        granularity,
        reporting,
        notify_uri: notify_uri.to_string(),
        filters,
    })
}

pub fn decode_subscription_request(raw: &[u8]) -> CodecResult<EesSubscriptionRequest> {
    let v = parse_json(raw)?;
    decode_request_obj(&Obj::root(&v)?)
}

pub fn decode_subscription_response(raw: &[u8]) -> CodecResult<EesSubscriptionResponse> {
    let v = parse_json(raw)?;
    let o = Obj::root(&v)?;
    let subscription_id = o.str("subscriptionId")?.to_string();
    if subscription_id.is_empty() {
        return Err(CodecError::schema("subscriptionId", "must not be empty"));
    }
    let accepted = decode_request_obj(&o.obj("accepted")?)?;
    Ok(EesSubscriptionResponse { subscription_id, accepted })
}

fn decode_volume(o: &Obj<'_>) -> CodecResult<VolumeMeasurement> {
    let v = VolumeMeasurement {
        total_volume: o.u64("totalVolume")?,
        ul_volume: o.u64("ulVolume")?,
        dl_volume: o.u64("dlVolume")?,
        total_nb_of_packets: o.u64("totalNbOfPackets")?,
        ul_nb_of_packets: o.u64("ulNbOfPackets")?,
        dl_nb_of_packets: o.u64("dlNbOfPackets")?,
    };
    if !v.is_additive() {
        return Err(CodecError::schema(o.path("totalVolume"), "totals must equal ul + dl"));
    }
    Ok(v)
}

fn decode_throughput(o: &Obj<'_>) -> CodecResult<ThroughputMeasurement> {
    Ok(ThroughputMeasurement { ul_throughput: o.f64("ulThroughput")?, dl_throughput: o.f64("dlThroughput")? })
}

fn decode_statistics(o: &Obj<'_>) -> CodecResult<ThroughputStatisticsMeasurement> {
    let s = ThroughputStatisticsMeasurement {
        ul_average: o.f64("ulAverage")?,
        ul_peak: o.f64("ulPeak")?,
        dl_average: o.f64("dlAverage")?,
        dl_peak: o.f64("dlPeak")?,
    };
    if !s.is_consistent() {
        return Err(CodecError::schema(o.path("ulPeak"), "peak must be >= average"));
    }
    Ok(s)
}

fn decode_item(o: &Obj<'_>) -> CodecResult<UsageMeasurementItem> {
    let flow_info = match o.opt_obj("flowInfo")? {
        None => None,
        Some(f) => Some(FlowInfo { pack_filt_id: f.str("packFiltId")?.to_string(), f_dir: f.token("fDir")? }),
    };
    let item = UsageMeasurementItem {
        flow_info,
        volume_measurement: o.opt_obj("volumeMeasurement")?.map(|v| decode_volume(&v)).transpose()?,
        throughput_measurement: o.opt_obj("throughputMeasurement")?.map(|v| decode_throughput(&v)).transpose()?,
        throughput_statistics_measurement: o
            .opt_obj("throughputStatisticsMeasurement")?
            .map(|v| decode_statistics(&v))
            .transpose()?,
    };
    if !item.has_measurement() {
        return Err(CodecError::schema(o.path("volumeMeasurement"), "item carries no measurement"));
    }
    Ok(item)
}

pub(crate) fn decode_notification_obj(o: &Obj<'_>) -> CodecResult<EesNotification> {
    let event_type = o.token("eventType")?;
    let ue_ipv4_addr = o.ipv4("ueIpv4Addr")?;
    let snssai = decode_snssai(&o.obj("snssai")?)?;
    let time_stamp = o.timestamp("timeStamp")?;
    let start_time = o.timestamp("startTime")?;
    if start_time > time_stamp {
        return Err(CodecError::schema(o.path("timeStamp"), "timeStamp precedes startTime"));
    }
    let items = o.array("userDataUsageMeasurements")?;
    let user_data_usage_measurements = items
        .iter()
        .enumerate()
        .map(|(i, v)| decode_item(&o.element("userDataUsageMeasurements", i, v)?))
        .collect::<CodecResult<Vec<_>>>()?;
    let subscription_id = o.opt_str("subscriptionId")?.unwrap_or_default().to_string();
    Ok(EesNotification {
        event_type,
        ue_ipv4_addr,
        snssai,
        time_stamp,
        start_time,
        user_data_usage_measurements,
        subscription_id,
    })
}

pub fn decode_notification(raw: &[u8]) -> CodecResult<EesNotification> {
    let v = parse_json(raw)?;
    decode_notification_obj(&Obj::root(&v)?)
}

pub fn validate_request(req: &EesSubscriptionRequest) -> CodecResult<()> {
    if req.event_types.is_empty() {
        return Err(CodecError::InvariantViolation("eventTypes is empty".into()));
    }
    if req.reporting.period_seconds == 0 || req.reporting.max_reports == Some(0) {
        return Err(CodecError::InvariantViolation("reporting counters must be >= 1".into()));
    }
    check_notify_uri(&req.notify_uri, "notifyUri").map_err(|e| CodecError::InvariantViolation(e.to_string()))?;
    check_snssai(req.filters.as_ref().and_then(|f| f.snssai.as_ref()))
}

fn check_snssai(s: Option<&SnssaiId>) -> CodecResult<()> {
    match s.and_then(|s| s.sd) {
        Some(sd) if sd > SnssaiId::SD_MAX => Err(CodecError::InvariantViolation(format!("sd {sd:#x} exceeds 24 bits"))),
        _ => Ok(()),
    }
}

pub fn validate_notification(n: &EesNotification) -> CodecResult<()> {
    if n.start_time > n.time_stamp {
        return Err(CodecError::InvariantViolation("startTime after timeStamp".into()));
    }
    check_snssai(Some(&n.snssai))?;
    for (i, item) in n.user_data_usage_measurements.iter().enumerate() {
        let bad = |what: &str| CodecError::InvariantViolation(format!("userDataUsageMeasurements[{i}]: {what}"));
        if !item.has_measurement() {
            return Err(bad("no measurement"));
        }
        if item.volume_measurement.is_some_and(|v| !v.is_additive()) {
            return Err(bad("volume totals not additive"));
        }
        if let Some(t) = item.throughput_measurement {
            if !(t.ul_throughput.is_finite() && t.dl_throughput.is_finite())
                || t.ul_throughput < 0.0
                || t.dl_throughput < 0.0
            {
                return Err(bad("throughput must be finite and non-negative"));
            }
        }
        if item.throughput_statistics_measurement.is_some_and(|s| !s.is_consistent()) {
            return Err(bad("statistics must satisfy peak >= average >= 0"));
        }
    }
    Ok(())
}

pub fn encode_subscription_request(req: &EesSubscriptionRequest) -> CodecResult<Vec<u8>> {
    validate_request(req)?;
    Ok(serde_json::to_vec(req).expect("request serializes"))
}

pub fn encode_subscription_response(resp: &EesSubscriptionResponse) -> CodecResult<Vec<u8>> {
    validate_request(&resp.accepted)?;
    Ok(serde_json::to_vec(resp).expect("response serializes"))
}

pub fn encode_notification(n: &EesNotification) -> CodecResult<Vec<u8>> {
    validate_notification(n)?;
    Ok(serde_json::to_vec(n).expect("notification serializes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request_json(granularity: &str, events: &str) -> String {
        format!(
            r#"{{"eventTypes":{events},"measurementTypes":["VOLUME_MEASUREMENT"],
                "granularity":"{granularity}","reporting":{{"periodSeconds":3}},
                "notifyUri":"http://127.0.0.1:9000/sbi/notify","vendorExt":{{"x":1}}}}"#
        )
    }

    #[test]
    fn decodes_per_flow_volume_request() {
        let req = decode_subscription_request(request_json("PER_FLOW", r#"["USER_DATA_USAGE_MEASURES"]"#).as_bytes())
            .unwrap();
        assert_eq!(req.event_types.iter().copied().collect::<Vec<_>>(), vec![EventType::UserDataUsageMeasures]);
        assert_eq!(req.granularity, Granularity::PerFlow);
        assert_eq!(req.reporting.period_seconds, 3);
        assert!(req.measurement_types.contains(&MeasurementType::VolumeMeasurement));
    }

    #[test]
    fn empty_event_types_rejected() {
        let err = decode_subscription_request(request_json("PER_FLOW", "[]").as_bytes()).unwrap_err();
        assert!(matches!(&err, CodecError::SchemaViolation { field, .. } if field == "eventTypes"), "{err:?}");
    }

    #[test]
    fn unknown_granularity_rejected() {
        let err = decode_subscription_request(request_json("PER_PACKET", r#"["USER_DATA_USAGE_MEASURES"]"#).as_bytes())
            .unwrap_err();
        assert_eq!(
            err,
            CodecError::UnknownEnumToken { field: "granularity".into(), token: "PER_PACKET".into() }
        );
    }

    #[test]
    fn unknown_event_token_rejected_with_index() {
        let err = decode_subscription_request(
            request_json("PER_FLOW", r#"["USER_DATA_USAGE_MEASURES","QOS_MONITORING"]"#).as_bytes(),
        )
        .unwrap_err();
        assert_eq!(err.field(), Some("eventTypes[1]"));
    }

    #[test]
    fn relative_notify_uri_rejected() {
        let raw = request_json("PER_FLOW", r#"["USER_DATA_USAGE_MEASURES"]"#).replace("http://127.0.0.1:9000", "");
        let err = decode_subscription_request(raw.as_bytes()).unwrap_err();
        assert_eq!(err.field(), Some("notifyUri"));
    }

    #[test]
    fn zero_period_rejected() {
        let raw = request_json("PER_FLOW", r#"["USER_DATA_USAGE_MEASURES"]"#).replace("\"periodSeconds\":3", "\"periodSeconds\":0");
        let err = decode_subscription_request(raw.as_bytes()).unwrap_err();
        assert_eq!(err.field(), Some("reporting.periodSeconds"));
    }

    #[test]
    fn non_utf8_is_malformed() {
        assert!(matches!(decode_subscription_request(&[0xff, 0xfe]), Err(CodecError::MalformedJson(_))));
    }

    #[test]
    fn snssai_sd_accepts_five_digits_and_emits_six() {
        let s: SnssaiId = serde_json::from_str(r#"{"sst":2,"sd":"00002"}"#).unwrap();
        assert_eq!(s, SnssaiId::new(2, Some(2)));
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"{"sst":2,"sd":"000002"}"#);
        assert!(SnssaiId::parse_sd("0002").is_none());
        assert!(SnssaiId::parse_sd("00000g").is_none());
    }

    #[test]
    fn non_additive_volume_rejected() {
        let raw = r#"{"eventType":"USER_DATA_USAGE_MEASURES","ueIpv4Addr":"10.42.0.2","snssai":{"sst":2},
            "timeStamp":"2025-03-27T18:03:49Z","startTime":"2025-03-27T18:00:59Z",
            "userDataUsageMeasurements":[{"volumeMeasurement":{"totalVolume":10,"ulVolume":4,"dlVolume":5,
            "totalNbOfPackets":2,"ulNbOfPackets":1,"dlNbOfPackets":1}}]}"#;
        let err = decode_notification(raw.as_bytes()).unwrap_err();
        assert_eq!(err.field(), Some("userDataUsageMeasurements[0].volumeMeasurement.totalVolume"));
    }

    #[test]
    fn encode_rejects_inverted_window() {
        let t = parse_timestamp("2025-03-27T18:00:59Z").unwrap();
        let n = EesNotification {
            event_type: EventType::UserDataUsageMeasures,
            ue_ipv4_addr: "10.42.0.2".parse().unwrap(),
            snssai: SnssaiId::new(2, None),
            time_stamp: t,
            start_time: t + chrono::Duration::seconds(1),
            user_data_usage_measurements: vec![],
            subscription_id: "s".into(),
        };
        assert!(matches!(encode_notification(&n), Err(CodecError::InvariantViolation(_))));
    }

    #[test]
    fn packet_filter_id_round_trips() {
        let key = FlowKey {
            src_ip: "10.42.0.2".parse().unwrap(),
            dst_ip: "142.250.64.78".parse().unwrap(),
            src_port: 40312,
            dst_port: 443,
            direction: FlowDirection::Bidirectional,
        };
        let id = key.packet_filter_id();
        assert!(id.starts_with(r#"{"SrcIp":"10.42.0.2","DstIp":"142.250.64.78""#), "{id}");
        assert_eq!(FlowKey::from_packet_filter_id(&id, FlowDirection::Bidirectional), Some(key));
    }

    #[test]
    fn reverse_flows_normalize_to_same_key() {
        let ue: Ipv4Addr = "10.42.0.2".parse().unwrap();
        let up = FlowKey {
            src_ip: ue,
            dst_ip: "1.1.1.1".parse().unwrap(),
            src_port: 5000,
            dst_port: 80,
            direction: FlowDirection::Uplink,
        };
        assert_eq!(up.normalized_for(ue), up.reversed().normalized_for(ue));
        assert_eq!(up.normalized_for(ue).src_ip, ue);
    }
}
