mod support;

use nwdaf_loop::ees::{
    self, decode_abnormal_behaviour, decode_analytics_subscription, decode_notification, decode_subscription_request,
    decode_subscription_response, encode_abnormal_behaviour, encode_analytics_subscription, encode_notification,
    encode_subscription_request, encode_subscription_response, CodecError, EventType, FlowDirection, Granularity,
    MeasurementType, SnssaiId, Token,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use support::messages as gen;

const SAMPLES: usize = 1000;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn requests_round_trip() {
    let mut r = rng(1);
    for _ in 0..SAMPLES {
        let x = gen::request(&mut r);
        assert_eq!(decode_subscription_request(&encode_subscription_request(&x).unwrap()).unwrap(), x);
    }
}

#[test]
fn responses_round_trip() {
    let mut r = rng(2);
    for _ in 0..SAMPLES {
        let x = gen::response(&mut r);
        assert_eq!(decode_subscription_response(&encode_subscription_response(&x).unwrap()).unwrap(), x);
    }
}

#[test]
fn notifications_round_trip() {
    let mut r = rng(3);
    for _ in 0..SAMPLES {
        let x = gen::notification(&mut r);
        assert_eq!(decode_notification(&encode_notification(&x).unwrap()).unwrap(), x);
    }
}

#[test]
fn analytics_subscriptions_round_trip() {
    let mut r = rng(4);
    for _ in 0..SAMPLES {
        let x = gen::analytics_subscription(&mut r);
        assert_eq!(decode_analytics_subscription(&encode_analytics_subscription(&x).unwrap()).unwrap(), x);
    }
}

#[test]
fn abnormal_behaviour_round_trips() {
    let mut r = rng(5);
    for _ in 0..SAMPLES {
        let x = gen::abnormal_behaviour(&mut r);
        assert_eq!(decode_abnormal_behaviour(&encode_abnormal_behaviour(&x).unwrap()).unwrap(), x);
    }
}

/// Structural equality, except that `sd` compares by value since the
/// encoder always writes six digits.
fn same_document(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "keys at {path}");
            for (k, v) in x {
                let p = format!("{path}.{k}");
                if k == "sd" {
                    let sd = |v: &Value| SnssaiId::parse_sd(v.as_str().unwrap()).unwrap();
                    assert_eq!(sd(v), sd(&y[k]), "{p}");
                } else {
                    same_document(v, &y[k], &p);
                }
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "length at {path}");
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                same_document(u, v, &format!("{path}[{i}]"));
            }
        }
        (Value::Number(x), Value::Number(y)) => assert_eq!(x.as_f64(), y.as_f64(), "{path}"),
        _ => assert_eq!(a, b, "{path}"),
    }
}

#[test]
fn sample_notification_survives_decode_and_encode() {
    let n = decode_notification(gen::SAMPLE_NOTIFICATION.as_bytes()).unwrap();
    assert_eq!(n.start_time, ees::parse_timestamp("2025-03-27T18:00:59Z").unwrap());
    assert_eq!(n.ue_ipv4_addr.to_string(), "10.42.0.2");
    assert_eq!(n.snssai, SnssaiId::new(2, Some(2)));
    let item = &n.user_data_usage_measurements[0];
    assert_eq!(item.flow_info.as_ref().unwrap().f_dir, FlowDirection::Bidirectional);
    assert_eq!(item.volume_measurement.unwrap().total_volume, 152_300);

    let encoded = encode_notification(&n).unwrap();
    let original: Value = serde_json::from_str(gen::SAMPLE_NOTIFICATION).unwrap();
    let again: Value = serde_json::from_slice(&encoded).unwrap();
    same_document(&original, &again, "$");
    assert_eq!(again["snssai"]["sd"], "000002");
}

#[test]
fn sample_field_names_are_emitted() {
    let n = decode_notification(gen::SAMPLE_NOTIFICATION.as_bytes()).unwrap();
    let text = String::from_utf8(encode_notification(&n).unwrap()).unwrap();
    for name in [
        "eventType",
        "ueIpv4Addr",
        "snssai",
        "timeStamp",
        "startTime",
        "userDataUsageMeasurements",
        "flowInfo",
        "packFiltId",
        "fDir",
        "volumeMeasurement",
        "throughputMeasurement",
        "throughputStatisticsMeasurement",
    ] {
        assert!(text.contains(&format!("\"{name}\"")), "{name} missing");
    }
    assert!(text.contains("\"2025-03-27T18:00:59Z\""));
}

#[test]
fn empty_measurement_list_is_written_out() {
    let mut n = decode_notification(gen::SAMPLE_NOTIFICATION.as_bytes()).unwrap();
    n.user_data_usage_measurements.clear();
    let v: Value = serde_json::from_slice(&encode_notification(&n).unwrap()).unwrap();
    assert_eq!(v["userDataUsageMeasurements"], Value::Array(vec![]));
}

#[test]
fn truncated_json_is_malformed() {
    let raw = &gen::SAMPLE_NOTIFICATION.as_bytes()[..40];
    assert!(matches!(decode_notification(raw), Err(CodecError::MalformedJson(_))));
}

#[test]
fn inverted_window_is_a_schema_violation() {
    let raw = gen::SAMPLE_NOTIFICATION.replace("2025-03-27T18:00:59Z", "2025-03-27T19:00:00Z");
    let err = decode_notification(raw.as_bytes()).unwrap_err();
    assert_eq!(err.field(), Some("timeStamp"));
}

fn request_with(field: &str, token: &str) -> String {
    let mut v: Value = serde_json::from_slice(
        &encode_subscription_request(&ees::EesSubscriptionRequest::new(
            [EventType::UserDataUsageMeasures],
            [MeasurementType::VolumeMeasurement],
            Granularity::PerFlow,
            3,
            "http://127.0.0.1:8080/sbi/notify",
        ))
        .unwrap(),
    )
    .unwrap();
    match field {
        "granularity" => v["granularity"] = Value::String(token.into()),
        _ => v[field] = Value::Array(vec![Value::String(token.into())]),
    }
    v.to_string()
}

fn known(token: &str) -> bool {
    EventType::from_token(token).is_some()
        || MeasurementType::from_token(token).is_some()
        || Granularity::from_token(token).is_some()
}

proptest! {
    #[test]
    fn unknown_tokens_are_rejected_never_coerced(
        field in prop::sample::select(vec!["eventTypes", "measurementTypes", "granularity"]),
        token in "[A-Za-z_]{0,24}",
    ) {
        prop_assume!(!known(&token));
        let err = decode_subscription_request(request_with(field, &token).as_bytes()).unwrap_err();
        let is_unknown_token = matches!(err, CodecError::UnknownEnumToken { .. });
        prop_assert!(is_unknown_token, "{:?}", err);
    }

    #[test]
    fn case_variants_of_known_tokens_are_rejected(lower in any::<bool>(), idx in 0usize..2) {
        let tok = Granularity::ALL[idx].token();
        let bent = if lower { tok.to_lowercase() } else { tok.replace('_', "-") };
        prop_assert!(decode_subscription_request(request_with("granularity", &bent).as_bytes()).is_err());
    }

    #[test]
    fn decoded_volumes_are_always_additive(ul in 0u64..1 << 40, dl in 0u64..1 << 40, skew in -3i64..=3) {
        let total = (ul + dl) as i64 + skew;
        prop_assume!(total >= 0);
        let raw = format!(
            r#"{{"eventType":"USER_DATA_USAGE_MEASURES","ueIpv4Addr":"10.42.0.2","snssai":{{"sst":1}},
            "timeStamp":"2025-03-27T18:03:49Z","startTime":"2025-03-27T18:00:59Z",
            "userDataUsageMeasurements":[{{"volumeMeasurement":{{"totalVolume":{total},"ulVolume":{ul},"dlVolume":{dl},
            "totalNbOfPackets":2,"ulNbOfPackets":1,"dlNbOfPackets":1}}}}]}}"#
        );
        match decode_notification(raw.as_bytes()) {
            Ok(n) => {
                prop_assert_eq!(skew, 0);
                prop_assert!(n.user_data_usage_measurements[0].volume_measurement.unwrap().is_additive());
            }
            Err(e) => {
                prop_assert_ne!(skew, 0);
                let is_schema = matches!(e, CodecError::SchemaViolation { .. });
                prop_assert!(is_schema, "{:?}", e);
            }
        }
    }

    #[test]
    fn unknown_top_level_fields_are_tolerated(key in "[a-z]{3,10}", seed in any::<u64>()) {
        let x = gen::notification(&mut rng(seed));
        let mut v: Value = serde_json::from_slice(&encode_notification(&x).unwrap()).unwrap();
        prop_assume!(v.get(&key).is_none());
        v[&key] = Value::Bool(true);
        prop_assert_eq!(decode_notification(v.to_string().as_bytes()).unwrap(), x);
    }
}
