use proptest::prelude::*;

use qgml_core::config::derive_seed;
use qgml_core::dataset::{max_samples, subsample_indices};
use qgml_core::io::{decode_obs, decode_trajectory, encode_obs, encode_trajectory};
use qgml_core::observations::{h_transpose, interpolate, ObsBatch, ObsDatabase, ObsLocation};
use qgml_core::pipeline::{parse_duration_days, tau_label};
use qgml_core::qg::{Grid, ModelState, Trajectory};

fn grid() -> Grid {
    Grid::new(6, 4, 2.4, 1.5).unwrap()
}

fn location(g: Grid) -> impl Strategy<Value = ObsLocation> {
    (0..2usize, 0.0..g.lx, 0.0..=g.ly).prop_map(|(layer, x, y)| ObsLocation { layer, x, y })
}

proptest! {
    #[test]
    fn trajectory_bytes_round_trip(
        values in prop::collection::vec(prop::num::f64::ANY, 48 * 3),
        t0 in -1e3..1e3f64,
        dt in 1e-3..10.0f64,
    ) {
        let g = grid();
        let states = values
            .chunks(48)
            .enumerate()
            .map(|(k, c)| ModelState::new(c.to_vec(), t0 + k as f64 * dt))
            .collect();
        let traj = Trajectory::new(states, dt).unwrap();
        let bytes = encode_trajectory(&traj, &g).unwrap();
        let back = decode_trajectory(&bytes, &g).unwrap();
        prop_assert_eq!(encode_trajectory(&back, &g).unwrap(), bytes.clone());
        for (a, b) in traj.states.iter().zip(&back.states) {
            let same: Vec<bool> = a.psi.iter().zip(&b.psi).map(|(x, y)| x.to_bits() == y.to_bits()).collect();
            prop_assert!(same.iter().all(|&s| s));
        }
        for cut in [0, 4, bytes.len() / 2, bytes.len() - 1] {
            prop_assert!(decode_trajectory(&bytes[..cut], &g).is_err());
        }
    }

    #[test]
    fn obs_text_round_trip(
        locs in prop::collection::vec(location(grid()), 1..6),
        values in prop::collection::vec(-1e6..1e6f64, 6),
        var in 1e-6..10.0f64,
        seed in any::<u64>(),
    ) {
        let n = locs.len();
        let db = ObsDatabase {
            window_start: 0.5,
            window_length: 0.864,
            batches_per_window: 1,
            batches: vec![ObsBatch { time: 0.536, locations: locs, values: values[..n].to_vec(), obs_var: var }],
            truth_id: "t".into(),
            seed,
        };
        let back = decode_obs(&encode_obs(&db).unwrap()).unwrap();
        prop_assert_eq!(back, db);
    }

    #[test]
    fn interpolation_transpose(
        locs in prop::collection::vec(location(grid()), 1..10),
        x in prop::collection::vec(-1.0..1.0f64, 48),
        r in prop::collection::vec(-1.0..1.0f64, 10),
    ) {
        let g = grid();
        let r = &r[..locs.len()];
        let hx = interpolate(&g, &ModelState::new(x.clone(), 0.0), &locs).unwrap();
        let htr = h_transpose(&g, &locs, r).unwrap();
        let lhs: f64 = hx.iter().zip(r).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&htr).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-14 * (1.0 + lhs.abs()));
    }

    #[test]
    fn subsampling_counts(n in 0..500usize, stride in 1..20usize) {
        let idx = subsample_indices(n, stride);
        prop_assert_eq!(idx.len(), n.div_ceil(stride));
        prop_assert!(idx.windows(2).all(|w| w[1] - w[0] == stride));
        prop_assert!(idx.last().is_none_or(|&k| k < n));
        prop_assert_eq!(max_samples(n + 1, stride), n / stride);
    }

    #[test]
    fn duration_labels_parse_back(hours in 1..2000u32) {
        let d = hours as f64 / 24.0;
        let back = parse_duration_days(&tau_label(d)).unwrap();
        prop_assert!((back - d).abs() < 1e-12);
    }

    #[test]
    fn seeds_depend_on_label(master in any::<u64>(), a in "[a-z/0-9]{1,12}", b in "[a-z/0-9]{1,12}") {
        prop_assert_eq!(derive_seed(master, &a), derive_seed(master, &a));
        if a != b {
            prop_assert_ne!(derive_seed(master, &a), derive_seed(master, &b));
        }
    }
}
