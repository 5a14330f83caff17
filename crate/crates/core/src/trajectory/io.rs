//! Delimiter-separated staypoint files.
//!
//! The header names the six staypoint columns (matched case-insensitively)
//! plus an optional POI identifier column. Timestamps are ISO-8601; values
//! without an offset are read as UTC.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime};

use super::{GeoPoint, GpsFix, StaypointRecord, TrajectoryDataset};
use crate::error::{Error, Result};

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Column names and delimiter of a staypoint file.
#[derive(Clone, Debug)]
pub struct Schema {
    pub delimiter: u8,
    pub user: String,
    pub lat: String,
    pub lon: String,
    pub checkin: String,
    pub leave: String,
    pub venue: String,
    /// Optional column; when absent, POI ids are derived from coordinates.
    pub poi: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            delimiter: b',',
            user: "UserId".into(),
            lat: "Latitude".into(),
            lon: "Longitude".into(),
            checkin: "CheckinTime".into(),
            leave: "LeavingTime".into(),
            venue: "VenueType".into(),
            poi: "PoiId".into(),
        }
    }
}

impl Schema {
    pub fn with_delimiter(mut self, delimiter: u8) -> Self {
        self.delimiter = delimiter;
        self
    }
}

/// A skipped input row.
#[derive(Clone, Debug, PartialEq)]
pub struct RowError {
    /// 1-based line number in the source.
    pub line: u64,
    pub reason: String,
}

/// Parsed dataset plus the rows that could not be used.
#[derive(Clone, Debug)]
pub struct ParseReport {
    pub dataset: TrajectoryDataset,
    pub skipped: Vec<RowError>,
}

struct Columns {
    user: usize,
    lat: usize,
    lon: usize,
    checkin: usize,
    leave: usize,
    venue: usize,
    poi: Option<usize>,
}

fn locate(headers: &csv::StringRecord, schema: &Schema) -> Result<Columns> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name.trim()))
    };
    let require = |name: &str| {
        find(name).ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    Ok(Columns {
        user: require(&schema.user)?,
        lat: require(&schema.lat)?,
        lon: require(&schema.lon)?,
        checkin: require(&schema.checkin)?,
        leave: require(&schema.leave)?,
        venue: require(&schema.venue)?,
        poi: find(&schema.poi),
    })
}

/// Parses an ISO-8601 timestamp to Unix seconds; offset-less values are UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .expect("timestamp within chrono range")
        .format(TIME_FORMAT)
        .to_string()
}

fn parse_row(row: &csv::StringRecord, cols: &Columns) -> std::result::Result<StaypointRecord, String> {
    let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
    let number = |i: usize, what: &str| {
        field(i)
            .parse::<f64>()
            .map_err(|_| format!("unparseable {what} `{}`", field(i)))
    };
    let time = |i: usize, what: &str| {
        parse_timestamp(field(i)).ok_or_else(|| format!("unparseable {what} `{}`", field(i)))
    };

    let user = field(cols.user);
    if user.is_empty() {
        return Err("empty user id".into());
    }
    let location = GeoPoint::new(number(cols.lat, "latitude")?, number(cols.lon, "longitude")?)
        .map_err(|e| e.to_string())?;
    let checkin = time(cols.checkin, "check-in time")?;
    let leave = time(cols.leave, "leaving time")?;
    if leave < checkin {
        return Err("leaving time precedes check-in time".into());
    }
    let poi = cols
        .poi
        .map(field)
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    StaypointRecord::new(user, location, checkin, leave, field(cols.venue), poi).map_err(|e| e.to_string())
}

/// Reads a staypoint file. Malformed rows are skipped and reported.
pub fn parse_dataset<R: Read>(source: R, schema: &Schema) -> Result<ParseReport> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let cols = locate(&headers, schema)?;

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for row in reader.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                skipped.push(RowError {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row, &cols) {
            Ok(record) => records.push(record),
            Err(reason) => skipped.push(RowError { line, reason }),
        }
    }

    Ok(ParseReport {
        dataset: TrajectoryDataset::from_records(records),
        skipped,
    })
}

/// Reads raw GPS fixes with columns `UserId`, `Latitude`, `Longitude`,
/// `Time` (case-insensitive) and groups them per user in time order.
/// Malformed rows are skipped and reported.
pub fn parse_gps_fixes<R: Read>(source: R, delimiter: u8) -> Result<(BTreeMap<String, Vec<GpsFix>>, Vec<RowError>)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let require = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    let (user, lat, lon, time) = (require("UserId")?, require("Latitude")?, require("Longitude")?, require("Time")?);

    let mut fixes: BTreeMap<String, Vec<GpsFix>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for row in reader.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                skipped.push(RowError { line, reason: e.to_string() });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let parsed = (|| {
            let id = field(user);
            if id.is_empty() {
                return Err("empty user id".to_string());
            }
            let coord = |i: usize| field(i).parse::<f64>().map_err(|_| format!("unparseable coordinate `{}`", field(i)));
            let point = GeoPoint::new(coord(lat)?, coord(lon)?).map_err(|e| e.to_string())?;
            let time = parse_timestamp(field(time)).ok_or_else(|| format!("unparseable time `{}`", field(time)))?;
            Ok((id.to_string(), GpsFix { point, time }))
        })();
        match parsed {
            Ok((id, fix)) => fixes.entry(id).or_default().push(fix),
            Err(reason) => skipped.push(RowError { line, reason }),
        }
    }
    for list in fixes.values_mut() {
        list.sort_by_key(|f| f.time);
    }
    Ok((fixes, skipped))
}

/// Writes `dataset` in the same format [`parse_dataset`] reads, POI ids included.
pub fn write_dataset<W: Write>(sink: W, dataset: &TrajectoryDataset, delimiter: u8) -> Result<()> {
    let schema = Schema::default();
    let mut writer = csv::WriterBuilder::new().delimiter(delimiter).from_writer(sink);
    writer.write_record([
        &schema.user,
        &schema.lat,
        &schema.lon,
        &schema.checkin,
        &schema.leave,
        &schema.venue,
        &schema.poi,
    ])?;
    for r in dataset.records() {
        writer.write_record([
            r.user_id.clone(),
            r.location.lat().to_string(),
            r.location.lon().to_string(),
            format_timestamp(r.checkin),
            format_timestamp(r.leave),
            r.venue_type.clone(),
            r.poi_id.clone(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io("<dataset writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_ONE: &str = "\
UserId,Latitude,Longitude,CheckinTime,LeavingTime,VenueType
153, 39.935892, 116.453081, 2009-06-21T03:03:01, 2009-06-21T03:38:57, Workplace
153, 39.998524, 116.387211, 2009-06-21T03:38:59, 2009-06-21T04:08:00, Restaurant
153, 39.991694, 116.389809, 2009-06-21T04:27:56, 2009-06-21T05:00:27, Recreational
153, 39.991424, 116.384395, 2009-06-21T05:24:01, 2009-06-21T05:53:31, Recreational
153, 39.995926, 116.390297, 2009-06-21T06:12:41, 2009-06-21T06:52:45, Apartment
";

    #[test]
    fn table_one_parses() {
        let report = parse_dataset(TABLE_ONE.as_bytes(), &Schema::default()).unwrap();
        assert!(report.skipped.is_empty());
        let t = report.dataset.trajectory("153").unwrap();
        assert_eq!(t.len(), 5);
        let first = &t.records()[0];
        assert_eq!(first.stay_seconds(), 2156);
        assert_eq!(first.venue_type, "Workplace");
        assert_eq!(first.location.lat(), 39.935892);
        assert_eq!(report.dataset.type_catalog().len(), 4);
    }

    #[test]
    fn header_names_are_case_insensitive() {
        let src = "userid;LATITUDE;longitude;checkintime;leavingtime;venuetype\nu;1;2;2020-01-01T00:00:00;2020-01-01T01:00:00;Home\n";
        let report = parse_dataset(src.as_bytes(), &Schema::default().with_delimiter(b';')).unwrap();
        assert_eq!(report.dataset.n_records(), 1);
    }

    #[test]
    fn empty_body_gives_empty_dataset() {
        let src = "UserId,Latitude,Longitude,CheckinTime,LeavingTime,VenueType\n";
        let report = parse_dataset(src.as_bytes(), &Schema::default()).unwrap();
        assert_eq!(report.dataset.n_users(), 0);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let src = "UserId,Latitude,Longitude,CheckinTime,VenueType\n";
        assert!(matches!(
            parse_dataset(src.as_bytes(), &Schema::default()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn out_of_order_rows_are_sorted() {
        let src = "UserId,Latitude,Longitude,CheckinTime,LeavingTime,VenueType
a,1,1,2020-01-02T00:00:00,2020-01-02T01:00:00,Home
a,1,2,2020-01-01T00:00:00,2020-01-01T01:00:00,Work
";
        let ds = parse_dataset(src.as_bytes(), &Schema::default()).unwrap().dataset;
        let t = ds.trajectory("a").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.records()[0].venue_type, "Work");
    }

    #[test]
    fn malformed_rows_are_counted() {
        let src = "UserId,Latitude,Longitude,CheckinTime,LeavingTime,VenueType
a,1,1,2020-01-01T00:00:00,2020-01-01T01:00:00,Home
a,abc,1,2020-01-01T00:00:00,2020-01-01T01:00:00,Home
a,1,1,yesterday,2020-01-01T01:00:00,Home
a,1,1,2020-01-01T02:00:00,2020-01-01T01:00:00,Home
a,95,1,2020-01-01T00:00:00,2020-01-01T01:00:00,Home
";
        let report = parse_dataset(src.as_bytes(), &Schema::default()).unwrap();
        assert_eq!(report.dataset.n_records(), 1);
        assert_eq!(report.skipped.len(), 4);
        assert_eq!(report.skipped[0].line, 3);
    }

    #[test]
    fn timestamps_accept_offsets() {
        assert_eq!(parse_timestamp("1970-01-01T01:00:00+01:00"), Some(0));
        assert_eq!(parse_timestamp("1970-01-01T00:00:10Z"), Some(10));
        assert_eq!(parse_timestamp("1970-01-01 00:00:10"), Some(10));
        assert_eq!(format_timestamp(1_245_553_381), "2009-06-21T03:03:01");
    }

    #[test]
    fn gps_fixes_grouped_and_sorted() {
        let text = "userid,latitude,longitude,time\nb,40.0,116.0,2024-01-01T00:10:00\na,40.0,116.0,2024-01-01T00:05:00\nb,40.0,116.0,2024-01-01T00:00:00\nb,95,116,2024-01-01T00:00:00\n";
        let (fixes, skipped) = parse_gps_fixes(text.as_bytes(), b',').unwrap();
        assert_eq!(fixes.len(), 2);
        assert!(fixes["b"][0].time < fixes["b"][1].time);
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].line, 5);
        assert!(parse_gps_fixes("user,lat\n".as_bytes(), b',').is_err());
    }
}
