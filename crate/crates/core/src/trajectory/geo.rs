use super::{GeoPoint, StaypointRecord, UNKNOWN_VENUE};
use crate::error::{Error, Result};

/// Mean Earth radius (IUGG), kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Great-circle distance in kilometres.
pub fn haversine_km(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat().to_radians(), b.lat().to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon() - a.lon()).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// A raw GPS fix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpsFix {
    pub point: GeoPoint,
    /// Seconds since the Unix epoch (UTC).
    pub time: i64,
}

/// Extracts staypoints from a time-ordered GPS log.
///
/// Scanning from an anchor fix, the run grows while each following fix lies
/// within `dist_threshold_m` of the anchor. A run spanning at least
/// `time_threshold_s` becomes a staypoint located at the mean of its fixes,
/// and scanning resumes after it; otherwise the anchor advances by one.
pub fn extract_staypoints(
    user_id: &str,
    fixes: &[GpsFix],
    dist_threshold_m: f64,
    time_threshold_s: i64,
) -> Result<Vec<StaypointRecord>> {
    if !(dist_threshold_m > 0.0) || time_threshold_s <= 0 {
        return Err(Error::InvalidParameter(
            "staypoint thresholds must be positive".into(),
        ));
    }
    if let Some(index) = fixes.windows(2).position(|w| w[1].time < w[0].time) {
        return Err(Error::UnsortedFixes { index: index + 1 });
    }

    let mut staypoints = Vec::new();
    let mut i = 0;
    while i < fixes.len() {
        let anchor = &fixes[i];
        let mut j = i + 1;
        while j < fixes.len() && haversine_km(&anchor.point, &fixes[j].point) * 1000.0 <= dist_threshold_m {
            j += 1;
        }
        let run = &fixes[i..j];
        let last = &run[run.len() - 1];
        if last.time - anchor.time >= time_threshold_s {
            let n = run.len() as f64;
            let lat = run.iter().map(|f| f.point.lat()).sum::<f64>() / n;
            let lon = run.iter().map(|f| f.point.lon()).sum::<f64>() / n;
            let location = GeoPoint::new(lat, lon)?;
            staypoints.push(StaypointRecord::new(
                user_id,
                location,
                anchor.time,
                last.time,
                UNKNOWN_VENUE,
                None,
            )?);
            i = j;
        } else {
            i += 1;
        }
    }
    Ok(staypoints)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn cosine_law_km(a: &GeoPoint, b: &GeoPoint) -> f64 {
        let (p1, p2) = (a.lat().to_radians(), b.lat().to_radians());
        let dl = (b.lon() - a.lon()).to_radians();
        let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
        EARTH_RADIUS_KM * c.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn identical_points_are_zero() {
        let a = p(39.9, 116.4);
        assert_eq!(haversine_km(&a, &a), 0.0);
    }

    #[test]
    fn half_circumference() {
        let d = haversine_km(&p(0.0, 0.0), &p(0.0, 180.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-9);
        assert!((d - 20015.1).abs() < 0.5);
    }

    #[test]
    fn beijing_pair_matches_cosine_law() {
        let a = p(39.9359, 116.4531);
        let b = p(39.9985, 116.3872);
        let h = haversine_km(&a, &b);
        let c = cosine_law_km(&a, &b);
        assert!(((h - c) / c).abs() < 1e-6, "{h} vs {c}");
    }

    #[test]
    fn single_fix_yields_nothing() {
        let fixes = [GpsFix { point: p(1.0, 1.0), time: 0 }];
        assert!(extract_staypoints("u", &fixes, 200.0, 1200).unwrap().is_empty());
    }

    #[test]
    fn identical_fixes_form_one_staypoint() {
        let fixes: Vec<_> = (0..10)
            .map(|k| GpsFix { point: p(39.9, 116.4), time: k * 200 })
            .collect();
        let sp = extract_staypoints("u", &fixes, 200.0, 1200).unwrap();
        assert_eq!(sp.len(), 1);
        assert!((sp[0].location.lat() - 39.9).abs() < 1e-12);
        assert_eq!(sp[0].checkin, 0);
        assert_eq!(sp[0].leave, 1800);
    }

    #[test]
    fn rejects_unsorted_and_bad_thresholds() {
        let fixes = [
            GpsFix { point: p(1.0, 1.0), time: 10 },
            GpsFix { point: p(1.0, 1.0), time: 5 },
        ];
        assert!(matches!(
            extract_staypoints("u", &fixes, 200.0, 60),
            Err(Error::UnsortedFixes { index: 1 })
        ));
        assert!(extract_staypoints("u", &[], 0.0, 60).is_err());
        assert!(extract_staypoints("u", &[], 10.0, 0).is_err());
    }
}
