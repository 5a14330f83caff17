use chrono::{DateTime, Datelike, Timelike};
use serde::{Deserialize, Serialize};

use super::{haversine_km, Trajectory};

/// Per-visit context derived from a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitFeatures {
    /// Check-in hour, 0..=23 (UTC).
    pub hour: u8,
    /// Check-in weekday, Monday = 0.
    pub day_of_week: u8,
    /// Distance from the previous check-in; 0 for the first record.
    pub travel_km: f64,
    pub stay_minutes: f64,
}

/// Hour of day (UTC) and weekday (Monday = 0) of a Unix timestamp.
pub(crate) fn hour_and_weekday(ts: i64) -> (u8, u8) {
    let dt = DateTime::from_timestamp(ts, 0).expect("timestamp within chrono range");
    (dt.hour() as u8, dt.weekday().num_days_from_monday() as u8)
}

/// Features for each record of `trajectory`, aligned by position.
pub fn derive_features(trajectory: &Trajectory) -> Vec<VisitFeatures> {
    let records = trajectory.records();
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (hour, day_of_week) = hour_and_weekday(r.checkin);
            let travel_km = match i {
                0 => 0.0,
                _ => haversine_km(&records[i - 1].location, &r.location),
            };
            VisitFeatures {
                hour,
                day_of_week,
                travel_km,
                stay_minutes: r.stay_seconds() as f64 / 60.0,
            }
        })
        .collect()
}
