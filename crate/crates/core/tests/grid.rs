mod common;

use std::sync::Arc;

use hotspot::grid::{aggregate, build_samples, read_stack, split_train_test, study_area, write_stack, GridSpec, CHANNELS};
use hotspot::ingest::{generate_synthetic, BoundingBox, CrimeType};
use proptest::prelude::*;

/// Walk the cell edges instead of dividing.
fn scan_cell(spec: &GridSpec, lon: f64, lat: f64) -> Option<(usize, usize)> {
    let b = spec.bbox;
    let p = spec.p;
    if lon < b.lon_min || lon > b.lon_max || lat < b.lat_min || lat > b.lat_max {
        return None;
    }
    let row = (0..p).find(|&r| lat > b.lat_max - (r + 1) as f64 * b.height() / p as f64).unwrap_or(p - 1);
    let col = (0..p).find(|&c| lon < b.lon_min + (c + 1) as f64 * b.width() / p as f64).unwrap_or(p - 1);
    Some((row, col))
}

fn near_edge(spec: &GridSpec, lon: f64, lat: f64) -> bool {
    let b = spec.bbox;
    let p = spec.p as f64;
    let u = (lon - b.lon_min) / b.width() * p;
    let v = (b.lat_max - lat) / b.height() * p;
    (u - u.round()).abs() < 1e-9 || (v - v.round()).abs() < 1e-9
}

#[test]
fn binning_matches_edge_scan_on_1000_incidents() {
    let bbox = common::unit_box();
    for p in [8, 16, 33] {
        let spec = GridSpec::new(bbox, p).unwrap();
        let incidents = common::scattered(p as u64, 1000, &bbox, 0.05, 30);
        let mut checked = 0;
        for inc in &incidents {
            if near_edge(&spec, inc.lon, inc.lat) {
                continue;
            }
            assert_eq!(spec.assign_cell(inc), scan_cell(&spec, inc.lon, inc.lat), "{inc:?}");
            checked += 1;
        }
        assert!(checked > 990);
    }
}

#[test]
fn aggregation_conserves_in_bounds_counts() {
    let bbox = common::unit_box();
    for seed in 0..50 {
        let p = [4, 8, 16][seed as usize % 3];
        let days = 20 + seed as usize;
        let spec = GridSpec::new(bbox, p).unwrap();
        let incidents = common::scattered(seed, 400, &bbox, 0.03, days as i64);
        let (stack, report) = aggregate(&incidents, &spec, common::start(), days);

        let inside = incidents
            .iter()
            .filter(|i| {
                let d = (i.timestamp.date() - common::start()).num_days();
                (0..days as i64).contains(&d)
                    && (bbox.lon_min..=bbox.lon_max).contains(&i.lon)
                    && (bbox.lat_min..=bbox.lat_max).contains(&i.lat)
            })
            .count();
        let total: u64 = stack.window_totals(0, days, CrimeType::AllCrimes).iter().map(|&c| c as u64).sum();
        assert_eq!(total as usize, inside);
        assert_eq!(report.binned, inside);
        assert_eq!(report.binned + report.out_of_bounds + report.out_of_range, incidents.len());
        assert!(stack.all_crimes_consistent());
        for ty in CrimeType::ALL.into_iter().filter(|t| t.is_concrete()) {
            let of_type = stack.window_totals(0, days, ty).iter().sum::<u32>() as usize;
            let expected = incidents
                .iter()
                .filter(|i| i.crime_type == ty && spec.assign_cell(i).is_some())
                .filter(|i| (0..days as i64).contains(&(i.timestamp.date() - common::start()).num_days()))
                .count();
            assert_eq!(of_type, expected);
        }
    }
}

#[test]
fn translating_box_and_points_keeps_cells() {
    let bbox = common::unit_box();
    let spec = GridSpec::new(bbox, 16).unwrap();
    let (dx, dy) = (0.25, -0.5);
    let moved = GridSpec::new(
        BoundingBox {
            lon_min: bbox.lon_min + dx,
            lon_max: bbox.lon_max + dx,
            lat_min: bbox.lat_min + dy,
            lat_max: bbox.lat_max + dy,
        },
        16,
    )
    .unwrap();
    for inc in common::scattered(3, 1000, &bbox, 0.0, 10) {
        let (lon, lat) = (inc.lon + dx, inc.lat + dy);
        if near_edge(&spec, inc.lon, inc.lat) || near_edge(&moved, lon, lat) {
            continue;
        }
        assert_eq!(spec.locate(inc.lon, inc.lat), moved.locate(lon, lat));
    }
}

#[test]
fn pipeline_keeps_labels_and_aggregate_channel() {
    for seed in 0..10 {
        let cfg = common::random_synth(seed);
        let events = generate_synthetic(&cfg).unwrap();
        let spec = GridSpec::new(cfg.bbox, 8).unwrap();
        let (stack, _) = aggregate(&events, &spec, cfg.start, cfg.days as usize);

        let mut bytes = Vec::new();
        write_stack(&mut bytes, &stack).unwrap();
        let back = read_stack(bytes.as_slice()).unwrap();
        assert_eq!(back, stack);
        assert!(back.all_crimes_consistent());

        let stack = Arc::new(stack);
        for sample in build_samples(&stack, CrimeType::Theft, 10, 30, 7).unwrap() {
            for px in sample.input_counts().chunks_exact(CHANNELS).chain(sample.horizon_counts().chunks_exact(CHANNELS)) {
                assert_eq!(px[CHANNELS - 1], px[..CHANNELS - 1].iter().sum::<u32>());
            }
            let direct = stack.window_totals(sample.anchor, sample.anchor + 30, CrimeType::Theft);
            assert_eq!(sample.target_counts(), direct);
            assert_eq!(sample.target_labels(), direct.iter().map(|&c| c >= 1).collect::<Vec<_>>());
        }
    }
}

#[test]
fn mask_covers_exactly_the_active_cells() {
    let stack = common::random_stack(5, 8, 40, 0.002);
    let mask = study_area(&stack);
    for cell in 0..64 {
        let any = (0..40).any(|d| stack.day(d)[cell * CHANNELS..(cell + 1) * CHANNELS].iter().any(|&c| c > 0));
        assert_eq!(mask.cells[cell], any);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn test_anchors_never_see_training_horizons(input_days in 1usize..60, stride in 1usize..40) {
        let stack = common::random_stack(1, 2, 1460, 0.0);
        let split = split_train_test(&stack, 3, 1, input_days, stride).unwrap();
        prop_assert_eq!(split.test_anchors.len(), 12);
        for &a in &split.train_anchors {
            prop_assert!(a >= input_days && a + 30 <= split.train_end);
        }
        for (k, &a) in split.test_anchors.iter().enumerate() {
            prop_assert_eq!(a, split.train_end + 30 * k);
        }
    }

    #[test]
    fn binning_is_total_inside_the_box(u in 0.0f64..=1.0, v in 0.0f64..=1.0, p in 1usize..70) {
        let b = common::unit_box();
        let spec = GridSpec::new(b, p).unwrap();
        let (row, col) = spec.locate(b.lon_min + u * b.width(), b.lat_min + v * b.height()).unwrap();
        prop_assert!(row < p && col < p);
    }
}
