use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use trajcf_core::matrix::{Index, MatrixMode, VisitMatrix};
use trajcf_core::ncf::{sample_negatives, Catalogs, DAYS, HOURS};

fn chi_square_p(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn negatives_are_uniform_over_unvisited_pois() {
    // Diagonal visits: every POI is unvisited by the same number of users,
    // so uniform per-user sampling gives a uniform POI marginal.
    let n = 10;
    let users = Index::new((0..n).map(|i| format!("u{i}")));
    let pois = Index::new((0..n).map(|i| format!("p{i}")));
    let dense = DMatrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 });
    let m = VisitMatrix::from_dense(users.clone(), pois.clone(), vec!["t".into(); n], &dense, MatrixMode::Binary).unwrap();
    let catalogs = Catalogs { users, pois, types: Index::new(["t"]) };
    let negatives = sample_negatives(&m, &catalogs, 10_000, 99).unwrap();
    assert_eq!(negatives.len(), 100_000);

    let mut by_poi = vec![0; n];
    let mut by_hour = vec![0; HOURS];
    let mut by_day = vec![0; DAYS];
    for ex in &negatives {
        assert_eq!(ex.label, 0);
        assert_ne!(ex.input.user, ex.input.poi);
        assert_eq!(ex.input.distance, 0);
        by_poi[ex.input.poi] += 1;
        by_hour[ex.input.hour] += 1;
        by_day[ex.input.day] += 1;
    }
    for (name, counts) in [("poi", &by_poi), ("hour", &by_hour), ("day", &by_day)] {
        let p = chi_square_p(counts);
        assert!(p > 0.01, "{name}: p = {p}");
    }
}

#[test]
fn paired_negatives_copy_the_positive_context() {
    use trajcf_core::matrix::build_matrix;
    use trajcf_core::ncf::{build_training_set, HyperParams, NegativeContext};
    use trajcf_core::trajectory::{GeoPoint, StaypointRecord, TrajectoryDataset};

    let records = (0..40).map(|i| {
        let poi = i % 5;
        StaypointRecord::new(
            format!("u{}", i % 3),
            GeoPoint::new(40.0 + poi as f64 * 0.05, 116.3).unwrap(),
            1_700_000_000 + i as i64 * 5000,
            1_700_000_000 + i as i64 * 5000 + 1800,
            if poi % 2 == 0 { "Apartment" } else { "Restaurant" },
            Some(format!("p{poi}")),
        )
        .unwrap()
    });
    let mut records: Vec<_> = records.collect();
    // Keep one POI unvisited by u0 so its row is not full.
    records.retain(|r| !(r.user_id == "u0" && r.poi_id == "p4"));
    let ds = TrajectoryDataset::from_records(records);
    let matrix = build_matrix(&ds, MatrixMode::Count);
    let catalogs = Catalogs::from_matrix(&matrix, &ds);
    let hp = HyperParams { negatives_per_positive: 3, seed: 4, ..HyperParams::default() };
    let data = build_training_set(&ds, &catalogs, &hp).unwrap();
    let n_pos = ds.n_records();
    assert_eq!(data.len(), n_pos * 4);
    let (pos, neg) = data.split_at(n_pos);
    assert!(pos.iter().all(|e| e.label == 1) && neg.iter().all(|e| e.label == 0));
    for (i, n) in neg.iter().enumerate() {
        let p = pos[i / 3].input;
        assert_eq!((n.input.hour, n.input.day, n.input.distance), (p.hour, p.day, p.distance));
        assert_eq!(matrix.get(n.input.user, n.input.poi), 0.0);
    }

    let uniform = HyperParams { negative_context: NegativeContext::Uniform, ..hp };
    let data = build_training_set(&ds, &catalogs, &uniform).unwrap();
    assert_eq!(data.len(), n_pos * 4);
    assert!(data[n_pos..].iter().all(|e| e.input.distance == 0));
}
