mod common;

use common::*;
use dynpath::bootstrap::percentile_band;
use dynpath::{fit_additive, fit_dpa, path_effect, Dataset, HazardSpec, PathModel, PathSpec, Subject};
use proptest::prelude::*;

fn dataset(seed: u64, n: usize, baseline: usize) -> Dataset {
    random_dataset(seed, RandomSpec { n, baseline, mediators: 1 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn total_is_direct_plus_indirect(seed in any::<u64>(), n in 4usize..=50, adjust in 0usize..=1) {
        let ds = dataset(seed, n, adjust);
        let names: Vec<String> = ds.covariate_names.clone();
        if let Ok(r) = fit_dpa(&ds, "treatment", "med_value", &names) {
            for k in 0..r.times.len() {
                prop_assert_eq!(r.total[k] - (r.direct[k] + r.indirect[k]), 0.0);
            }
        }
    }

    #[test]
    fn path_effects_reproduce_direct_and_indirect(seed in any::<u64>(), n in 6usize..=40) {
        let ds = dataset(seed, n, 0);
        let model = PathModel::new("treatment", ["med_value"], Vec::<String>::new());
        if let Ok(r) = fit_dpa(&ds, "treatment", "med_value", &[] as &[&str]) {
            let d = path_effect(&ds, &model, &PathSpec::new(["treatment"])).unwrap();
            let i = path_effect(&ds, &model, &PathSpec::new(["treatment", "med_value"])).unwrap();
            prop_assert_eq!(d.cumulative.iter().map(|v| v[0]).collect::<Vec<_>>(), r.direct);
            prop_assert_eq!(i.cumulative.iter().map(|v| v[0]).collect::<Vec<_>>(), r.indirect);
        }
    }

    #[test]
    fn fits_ignore_subject_order(seed in any::<u64>(), n in 6usize..=40) {
        let ds = dataset(seed, n, 1);
        let mut reversed = ds.subjects.clone();
        reversed.reverse();
        let rev = Dataset::new(reversed, "treatment", ds.covariate_names.clone(), ds.mediator_names.clone()).unwrap();
        let spec = HazardSpec::new(["treatment", "med_value", "z_1"]);
        match (fit_additive(&ds, &spec), fit_additive(&rev, &spec)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(&a.times, &b.times);
                for k in 0..a.times.len() {
                    for j in 0..a.labels.len() {
                        let (x, y) = (a.cumulative[k][j], b.cumulative[k][j]);
                        prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
                    }
                }
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "order changed fit success"),
        }
    }

    #[test]
    fn risk_sets_shrink_over_time(seed in any::<u64>(), n in 4usize..=50) {
        let ds = dataset(seed, n, 0);
        let times = ds.event_times();
        for w in times.windows(2) {
            let early: Vec<&str> = ds.risk_set(w[0]).iter().map(|s| s.id.as_str()).collect();
            for s in ds.risk_set(w[1]) {
                prop_assert!(early.contains(&s.id.as_str()));
            }
        }
        let followups: Vec<f64> = ds.subjects.iter().filter(|s| s.event).map(|s| s.followup).collect();
        prop_assert!(times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(times.iter().all(|t| followups.contains(t)));
    }

    #[test]
    fn locf_is_a_left_continuous_step(values in prop::collection::vec(-10.0f64..10.0, 1..6), probe in 0.0f64..4.0) {
        let pairs: Vec<(f64, f64)> = values.iter().enumerate().map(|(i, v)| (i as f64 * 0.75, *v)).collect();
        let s = Subject::new("x", 0.0, vec![], &pairs, 10.0, false).unwrap();
        let series = &s.mediators[0];
        prop_assert_eq!(series.locf(probe), left_limit(series, probe));
        for (i, (t, v)) in pairs.iter().enumerate() {
            // the value changes just after each measurement time, not at it
            prop_assert_eq!(series.locf(t + 1e-9), Some(*v));
            let before = if i == 0 { None } else { Some(pairs[i - 1].1) };
            prop_assert_eq!(series.locf(*t), before);
        }
    }

    #[test]
    fn wider_levels_give_wider_bands(curves in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..80)) {
        let refs: Vec<&[f64]> = curves.iter().map(Vec::as_slice).collect();
        let (lo90, hi90) = percentile_band(&refs, 0.90);
        let (lo99, hi99) = percentile_band(&refs, 0.99);
        for k in 0..4 {
            prop_assert!(lo99[k] <= lo90[k] && hi90[k] <= hi99[k]);
            prop_assert!(lo90[k] <= hi90[k]);
        }
    }
}
