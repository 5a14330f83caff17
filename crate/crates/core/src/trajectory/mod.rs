//! Semantic trajectories: staypoint records grouped per user, with a POI
//! catalog and a venue-type catalog.
//!
//! Records are immutable once a [`TrajectoryDataset`] has been assembled;
//! every user's records are kept sorted by check-in time.

mod features;
mod geo;
mod io;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{derive_features, VisitFeatures};
pub use geo::{extract_staypoints, haversine_km, GpsFix, EARTH_RADIUS_KM};
pub use io::{format_timestamp, parse_dataset, parse_gps_fixes, parse_timestamp, write_dataset, ParseReport, RowError, Schema};

/// Label used for records whose venue type is not known.
pub const UNKNOWN_VENUE: &str = "unknown";

/// A WGS84 coordinate in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if lat.is_nan() || lon.is_nan() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon)
        {
            return Err(Error::InvalidCoordinate { lat, lon });
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Derives a POI identifier from a coordinate rounded to 5 decimals (~1 m).
///
/// The identifier is the FNV-1a hash of the two rounded fixed-point
/// integers, so coordinates that agree to 5 decimals share a POI.
pub fn poi_id_for(point: &GeoPoint) -> String {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    let lat = (point.lat * 1e5).round() as i64;
    let lon = (point.lon * 1e5).round() as i64;
    let mut hash = OFFSET;
    for byte in lat.to_le_bytes().into_iter().chain(lon.to_le_bytes()) {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(PRIME);
    }
    format!("poi-{hash:016x}")
}

/// One check-in: a user staying at a POI between two UTC timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaypointRecord {
    pub user_id: String,
    pub location: GeoPoint,
    /// Check-in time, seconds since the Unix epoch (UTC).
    pub checkin: i64,
    /// Leaving time, seconds since the Unix epoch (UTC).
    pub leave: i64,
    pub venue_type: String,
    pub poi_id: String,
}

impl StaypointRecord {
    /// Builds a record, deriving `poi_id` from the coordinate when none is given.
    pub fn new(
        user_id: impl Into<String>,
        location: GeoPoint,
        checkin: i64,
        leave: i64,
        venue_type: impl Into<String>,
        poi_id: Option<String>,
    ) -> Result<Self> {
        if leave < checkin {
            return Err(Error::InvalidParameter(format!(
                "leave time {leave} precedes check-in {checkin}"
            )));
        }
        let venue_type = venue_type.into();
        let venue_type = if venue_type.trim().is_empty() {
            UNKNOWN_VENUE.to_string()
        } else {
            venue_type
        };
        Ok(Self {
            user_id: user_id.into(),
            poi_id: poi_id.unwrap_or_else(|| poi_id_for(&location)),
            location,
            checkin,
            leave,
            venue_type,
        })
    }

    /// Stay duration in seconds.
    pub fn stay_seconds(&self) -> i64 {
        self.leave - self.checkin
    }
}

/// A user's staypoints in check-in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    user_id: String,
    records: Vec<StaypointRecord>,
}

impl Trajectory {
    fn new(user_id: String, mut records: Vec<StaypointRecord>) -> Self {
        sort_records(&mut records);
        Self { user_id, records }
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn records(&self) -> &[StaypointRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn sort_records(records: &mut [StaypointRecord]) {
    records.sort_by(|a, b| {
        a.checkin
            .cmp(&b.checkin)
            .then(a.leave.cmp(&b.leave))
            .then_with(|| a.poi_id.cmp(&b.poi_id))
    });
}

/// Location and venue type of a POI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoiInfo {
    pub location: GeoPoint,
    pub venue_type: String,
}

/// All users' trajectories plus the POI and venue-type catalogs.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrajectoryDataset {
    trajectories: BTreeMap<String, Trajectory>,
    poi_catalog: BTreeMap<String, PoiInfo>,
    type_catalog: BTreeSet<String>,
}

impl TrajectoryDataset {
    /// Groups records per user and sorts each trajectory by check-in.
    ///
    /// The first record seen for a POI fixes its catalog entry.
    pub fn from_records(records: impl IntoIterator<Item = StaypointRecord>) -> Self {
        Self::builder().records(records).build()
    }

    pub fn builder() -> DatasetBuilder {
        DatasetBuilder::default()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.values()
    }

    pub fn trajectory(&self, user_id: &str) -> Option<&Trajectory> {
        self.trajectories.get(user_id)
    }

    /// User identifiers in ascending order, including users with no records.
    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.trajectories.keys().map(String::as_str)
    }

    pub fn n_users(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_records(&self) -> usize {
        self.trajectories.values().map(Trajectory::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_records() == 0
    }

    /// Every record, user by user, each user's in check-in order.
    pub fn records(&self) -> impl Iterator<Item = &StaypointRecord> {
        self.trajectories.values().flat_map(|t| t.records.iter())
    }

    pub fn poi_catalog(&self) -> &BTreeMap<String, PoiInfo> {
        &self.poi_catalog
    }

    pub fn type_catalog(&self) -> &BTreeSet<String> {
        &self.type_catalog
    }

    /// Partitions records at `t_split`: check-in `<= t_split` goes to train.
    ///
    /// Both halves keep the full user set and both catalogs, so matrices
    /// built from them share row and column indices.
    pub fn split(&self, t_split: i64) -> SplitDataset {
        split_train_test(self, t_split)
    }
}

/// Incremental construction of a [`TrajectoryDataset`].
#[derive(Default)]
pub struct DatasetBuilder {
    users: BTreeSet<String>,
    records: Vec<StaypointRecord>,
    pois: BTreeMap<String, PoiInfo>,
    types: BTreeSet<String>,
}

impl DatasetBuilder {
    pub fn records(mut self, records: impl IntoIterator<Item = StaypointRecord>) -> Self {
        self.records.extend(records);
        self
    }

    /// Registers users that may have no records.
    pub fn users<S: Into<String>>(mut self, users: impl IntoIterator<Item = S>) -> Self {
        self.users.extend(users.into_iter().map(Into::into));
        self
    }

    /// Registers POIs that may never be visited.
    pub fn pois(mut self, pois: impl IntoIterator<Item = (String, PoiInfo)>) -> Self {
        for (id, info) in pois {
            self.pois.entry(id).or_insert(info);
        }
        self
    }

    pub fn types<S: Into<String>>(mut self, types: impl IntoIterator<Item = S>) -> Self {
        self.types.extend(types.into_iter().map(Into::into));
        self
    }

    pub fn build(self) -> TrajectoryDataset {
        let DatasetBuilder {
            users,
            records,
            mut pois,
            mut types,
        } = self;

        let mut grouped: BTreeMap<String, Vec<StaypointRecord>> =
            users.into_iter().map(|u| (u, Vec::new())).collect();
        for record in records {
            pois.entry(record.poi_id.clone()).or_insert_with(|| PoiInfo {
                location: record.location,
                venue_type: record.venue_type.clone(),
            });
            types.insert(record.venue_type.clone());
            grouped.entry(record.user_id.clone()).or_default().push(record);
        }
        for info in pois.values() {
            types.insert(info.venue_type.clone());
        }
        if types.is_empty() {
            types.insert(UNKNOWN_VENUE.to_string());
        }

        let trajectories = grouped
            .into_iter()
            .map(|(user, recs)| (user.clone(), Trajectory::new(user, recs)))
            .collect();
        TrajectoryDataset {
            trajectories,
            poi_catalog: pois,
            type_catalog: types,
        }
    }
}

/// Train/test partition of a dataset at a split time.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: TrajectoryDataset,
    pub test: TrajectoryDataset,
    pub t_split: i64,
    /// Users without a single train record.
    pub cold_start: BTreeSet<String>,
}

/// Splits `dataset` so that records with `checkin <= t_split` form the train half.
pub fn split_train_test(dataset: &TrajectoryDataset, t_split: i64) -> SplitDataset {
    let (train, test): (Vec<_>, Vec<_>) = dataset
        .records()
        .cloned()
        .partition(|r| r.checkin <= t_split);

    let half = |records: Vec<StaypointRecord>| {
        TrajectoryDataset::builder()
            .users(dataset.user_ids())
            .pois(dataset.poi_catalog.clone())
            .types(dataset.type_catalog.iter().cloned())
            .records(records)
            .build()
    };
    let train = half(train);
    let test = half(test);
    let cold_start = train
        .trajectories()
        .filter(|t| t.is_empty())
        .map(|t| t.user_id.clone())
        .collect();

    SplitDataset {
        train,
        test,
        t_split,
        cold_start,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: &str, lat: f64, lon: f64, checkin: i64, leave: i64, venue: &str) -> StaypointRecord {
        StaypointRecord::new(user, GeoPoint::new(lat, lon).unwrap(), checkin, leave, venue, None).unwrap()
    }

    #[test]
    fn geopoint_bounds() {
        assert!(GeoPoint::new(90.0, 180.0).is_ok());
        assert!(GeoPoint::new(90.1, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn record_rejects_leave_before_checkin() {
        let p = GeoPoint::new(1.0, 1.0).unwrap();
        assert!(StaypointRecord::new("u", p, 10, 9, "Home", None).is_err());
    }

    #[test]
    fn poi_id_uses_five_decimals() {
        let a = GeoPoint::new(39.935892, 116.453081).unwrap();
        let b = GeoPoint::new(39.9358921, 116.4530809).unwrap();
        let c = GeoPoint::new(39.93590, 116.453081).unwrap();
        assert_eq!(poi_id_for(&a), poi_id_for(&b));
        assert_ne!(poi_id_for(&a), poi_id_for(&c));
    }

    #[test]
    fn records_sorted_per_user() {
        let ds = TrajectoryDataset::from_records(vec![
            rec("a", 1.0, 1.0, 200, 250, "Home"),
            rec("a", 1.0, 2.0, 100, 150, "Work"),
        ]);
        let t = ds.trajectory("a").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.records()[0].checkin, 100);
        assert_eq!(ds.type_catalog().len(), 2);
    }

    #[test]
    fn empty_dataset_has_unknown_type() {
        let ds = TrajectoryDataset::from_records(Vec::new());
        assert_eq!(ds.n_users(), 0);
        assert!(ds.type_catalog().contains(UNKNOWN_VENUE));
    }

    #[test]
    fn split_boundary_goes_to_train() {
        let ds = TrajectoryDataset::from_records(vec![
            rec("a", 1.0, 1.0, 100, 110, "Home"),
            rec("a", 1.0, 1.0, 200, 210, "Home"),
            rec("b", 1.0, 1.0, 300, 310, "Home"),
        ]);
        let split = ds.split(200);
        assert_eq!(split.train.trajectory("a").unwrap().len(), 2);
        assert_eq!(split.test.trajectory("a").unwrap().len(), 0);
        assert_eq!(split.test.trajectory("b").unwrap().len(), 1);
        assert_eq!(split.cold_start, BTreeSet::from(["b".to_string()]));
    }

    #[test]
    fn split_all_before_leaves_test_empty() {
        let ds = TrajectoryDataset::from_records(vec![rec("a", 1.0, 1.0, 100, 110, "Home")]);
        let split = ds.split(1_000);
        assert!(split.test.is_empty());
        assert_eq!(split.test.n_users(), 1);
        assert!(split.cold_start.is_empty());
    }
}
