use proptest::prelude::*;

use pemorl_core::auction::auction_row;
use pemorl_core::dataset::{sliced_wasserstein, wasserstein_1d};
use pemorl_core::equivariance::Permutation;
use pemorl_core::offline_rl::{squash, unsquash};
use pemorl_core::rng;

fn bidders() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..7).prop_flat_map(|n| (prop::collection::vec(0.0..3.0f64, n), prop::collection::vec(0.01..5.0f64, n)))
}

proptest! {
    #[test]
    fn permutation_inverse_round_trips(n in 1usize..8, seed in any::<u64>()) {
        let rho = Permutation::random(n, &mut rng::from_seed(seed));
        let v: Vec<usize> = (0..n).collect();
        let back = rho.inverse().apply(&rho.apply(&v).unwrap()).unwrap();
        prop_assert_eq!(back, v);
        prop_assert!(rho.compose(&rho.inverse()).unwrap().is_identity());
    }

    #[test]
    fn second_price_winner_and_price((bids, values) in bidders(), reserve in 0.0..0.5f64) {
        let n = bids.len();
        let ids: Vec<u64> = (0..n as u64).collect();
        let eligible = vec![true; n];
        let ecpm: Vec<f64> = bids.iter().zip(&values).map(|(b, v)| b * v).collect();
        match auction_row(&bids, &values, &ids, &eligible, reserve) {
            None => prop_assert!(ecpm.iter().all(|e| *e <= 0.0)),
            Some(o) => {
                prop_assert!(ecpm.iter().all(|e| *e <= ecpm[o.winner]));
                prop_assert!(o.price >= 0.0 && o.price <= bids[o.winner]);
                // Paying the runner-up's eCPM never exceeds the winner's own.
                prop_assert!(o.price * values[o.winner] <= ecpm[o.winner] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn auction_outcome_follows_relabeling((bids, values) in bidders(), seed in any::<u64>()) {
        let n = bids.len();
        let ids: Vec<u64> = (0..n as u64).collect();
        let eligible = vec![true; n];
        let rho = Permutation::random(n, &mut rng::from_seed(seed));
        let a = auction_row(&bids, &values, &ids, &eligible, 0.1);
        let b = auction_row(
            &rho.apply(&bids).unwrap(),
            &rho.apply(&values).unwrap(),
            &rho.apply(&ids).unwrap(),
            &eligible,
            0.1,
        );
        match (a, b) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                prop_assert_eq!(rho.apply(&ids).unwrap()[b.winner], ids[a.winner]);
                prop_assert_eq!(a.price, b.price);
            }
            _ => prop_assert!(false, "outcome existence changed under relabeling"),
        }
    }

    #[test]
    fn squash_round_trips(u in -5.0..5.0f64, w_max in 0.5..5.0f64) {
        let a = squash(u, w_max);
        prop_assert!(a > 0.0 && a < w_max);
        prop_assert!((unsquash(a, w_max) - u).abs() < 1e-6);
    }

    #[test]
    fn wasserstein_is_a_symmetric_distance(
        a in prop::collection::vec(-10.0..10.0f64, 1..40),
        b in prop::collection::vec(-10.0..10.0f64, 1..40),
    ) {
        let ab = wasserstein_1d(&a, &b);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - wasserstein_1d(&b, &a)).abs() < 1e-9);
        prop_assert!(wasserstein_1d(&a, &a).abs() < 1e-12);
    }

    #[test]
    fn sliced_wasserstein_ignores_sample_order(
        rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 2..20),
        seed in any::<u64>(),
    ) {
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + 1.0).collect()).collect();
        let mut reversed = shifted.clone();
        reversed.reverse();
        let d = sliced_wasserstein(&rows, &shifted, 16, 7).unwrap();
        let d_rev = sliced_wasserstein(&rows, &reversed, 16, 7).unwrap();
        prop_assert!((d - d_rev).abs() < 1e-9);
        prop_assert!(d > 0.0);
        prop_assert!(sliced_wasserstein(&rows, &rows, 16, seed).unwrap().abs() < 1e-12);
    }
}
