use crate::model::RackId;
use std::fmt;
use thiserror::Error;

/// Filter matching every rack's telemetry topic.
pub const TELEMETRY_FILTER: &str = "dc/+/telemetry";

pub fn telemetry_topic(rack: &RackId) -> String {
    format!("dc/{rack}/telemetry")
}

/// Rack id from a `dc/{rack}/telemetry` topic.
pub fn rack_of_topic(topic: &str) -> Option<RackId> {
    let mut parts = topic.split('/');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some("dc"), Some(rack), Some("telemetry"), None) if !rack.is_empty() => {
            Some(RackId::new(rack))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopicError {
    #[error("topic is empty")]
    Empty,
    #[error("segment {index} ({segment:?}): {reason}")]
    BadSegment {
        index: usize,
        segment: String,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Level {
    Exact(String),
    /// `+`
    Single,
    /// `#`, only valid as the final level
    Rest,
}

/// Parsed subscription filter with MQTT 3.1.1 wildcard rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicFilter {
    raw: String,
    levels: Vec<Level>,
}

impl TopicFilter {
    pub fn parse(filter: &str) -> Result<Self, TopicError> {
        if filter.is_empty() {
            return Err(TopicError::Empty);
        }
        let segments: Vec<&str> = filter.split('/').collect();
        let last = segments.len() - 1;
        let mut levels = Vec::with_capacity(segments.len());
        for (index, segment) in segments.iter().enumerate() {
            let bad = |reason| TopicError::BadSegment {
                index,
                segment: segment.to_string(),
                reason,
            };
            let level = match *segment {
                "+" => Level::Single,
                "#" if index == last => Level::Rest,
                "#" => return Err(bad("multi-level wildcard must be the last segment")),
                s if s.contains(['+', '#']) => {
                    return Err(bad("wildcards must occupy a whole segment"))
                }
                s => Level::Exact(s.to_string()),
            };
            levels.push(level);
        }
        Ok(TopicFilter {
            raw: filter.to_string(),
            levels,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn matches(&self, topic: &str) -> bool {
        let mut parts = topic.split('/');
        for level in &self.levels {
            match level {
                Level::Rest => return true,
                Level::Single => {
                    if parts.next().is_none() {
                        return false;
                    }
                }
                Level::Exact(s) => {
                    if parts.next() != Some(s.as_str()) {
                        return false;
                    }
                }
            }
        }
        parts.next().is_none()
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// Topic names carry no wildcards.
pub fn validate_topic(topic: &str) -> Result<(), TopicError> {
    if topic.is_empty() {
        return Err(TopicError::Empty);
    }
    for (index, segment) in topic.split('/').enumerate() {
        if segment.contains(['+', '#']) {
            return Err(TopicError::BadSegment {
                index,
                segment: segment.to_string(),
                reason: "wildcards are not allowed in topic names",
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wildcard_matches_every_rack() {
        let f = TopicFilter::parse(TELEMETRY_FILTER).unwrap();
        assert!(f.matches("dc/R01/telemetry"));
        assert!(f.matches("dc/B7/telemetry"));
        assert!(!f.matches("dc/R01/alerts"));
        assert!(!f.matches("dc/R01/telemetry/x"));
        assert!(!f.matches("dc/telemetry"));
    }

    #[test]
    fn hash_in_the_middle_names_the_segment() {
        let err = TopicFilter::parse("dc/#/x").unwrap_err();
        assert_eq!(
            err,
            TopicError::BadSegment {
                index: 1,
                segment: "#".into(),
                reason: "multi-level wildcard must be the last segment",
            }
        );
        assert!(err.to_string().contains("\"#\""));
    }

    #[test]
    fn partial_wildcards_rejected() {
        assert!(TopicFilter::parse("dc/R+/telemetry").is_err());
        assert!(TopicFilter::parse("").is_err());
        assert!(validate_topic("dc/+/telemetry").is_err());
    }

    #[test]
    fn trailing_hash_matches_subtree() {
        let f = TopicFilter::parse("dc/#").unwrap();
        assert!(f.matches("dc/R01/telemetry"));
        assert!(f.matches("dc"));
        assert!(!f.matches("other/R01"));
    }

    #[test]
    fn topic_round_trip() {
        let rack = RackId::new("R07");
        assert_eq!(rack_of_topic(&telemetry_topic(&rack)), Some(rack));
        assert_eq!(rack_of_topic("dc//telemetry"), None);
    }

    fn naive_match(filter: &[String], topic: &[String]) -> bool {
        match (filter.first().map(String::as_str), topic.first()) {
            (None, None) => true,
            (Some("#"), _) => true,
            (Some("+"), Some(_)) => naive_match(&filter[1..], &topic[1..]),
            (Some(f), Some(t)) if f == t => naive_match(&filter[1..], &topic[1..]),
            _ => false,
        }
    }

    proptest! {
        #[test]
        fn matches_recursive_definition(
            filter in prop::collection::vec(prop_oneof!["a", "b", "\\+"], 1..5),
            hash in any::<bool>(),
            topic in prop::collection::vec(prop_oneof!["a", "b"], 1..6),
        ) {
            let mut filter = filter;
            if hash {
                filter.push("#".into());
            }
            let f = TopicFilter::parse(&filter.join("/")).unwrap();
            prop_assert_eq!(f.matches(&topic.join("/")), naive_match(&filter, &topic));
        }
    }
}
