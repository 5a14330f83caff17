#![allow(dead_code)]

use proptest::prelude::*;
use trajcf_core::trajectory::{GeoPoint, StaypointRecord, TrajectoryDataset};

pub const TYPES: [&str; 4] = ["Apartment", "Workplace", "Restaurant", "Recreational"];

/// Records of up to 6 users over 12 POIs, each POI with a fixed type and spot.
pub fn record() -> impl Strategy<Value = StaypointRecord> {
    (0..6usize, 0..12usize, 0i64..1_000_000, 0i64..7200).prop_map(|(u, p, t, stay)| poi_record(u, p, t, stay))
}

pub fn poi_record(user: usize, poi: usize, checkin: i64, stay: i64) -> StaypointRecord {
    let location = GeoPoint::new(39.9 + poi as f64 * 0.01, 116.3).unwrap();
    StaypointRecord::new(
        format!("user-{user}"),
        location,
        checkin,
        checkin + stay,
        TYPES[poi % TYPES.len()],
        Some(format!("poi-{poi:02}")),
    )
    .unwrap()
}

pub fn dataset() -> impl Strategy<Value = TrajectoryDataset> {
    proptest::collection::vec(record(), 0..80).prop_map(TrajectoryDataset::from_records)
}
