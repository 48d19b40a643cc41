//! Wire model for event exposure and analytics messages.

pub mod analytics;
pub mod codec;
mod types;

pub use analytics::{
    decode_abnormal_behaviour, decode_analytics_subscription, encode_abnormal_behaviour,
    encode_analytics_subscription, AbnormalBehaviourNotification, AnalyticsEventId, AnalyticsSubscription,
    ExceptionId, ExceptionReport,
};
pub use codec::{
    check_notify_uri, decode_notification, decode_subscription_request, decode_subscription_response, encode_notification,
    encode_subscription_request, encode_subscription_response, CodecError, CodecResult,
};
pub use types::*;
