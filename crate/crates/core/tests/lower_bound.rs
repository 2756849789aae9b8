use ldplab_core::montecarlo::{enumerate_stuck_probability, estimate_tail, lower_bound_instance, run_ensemble};
use ldplab_core::optimizers::run_trajectory;
use ldplab_core::theory::lower_bound_exact_prob;

#[test]
fn clipped_and_vanilla_ensembles_give_identical_tails() {
    let vanilla = lower_bound_instance(1.0, vec![0.6, 0.0, 0.2], 40, false).unwrap();
    let clipped = lower_bound_instance(1.0, vec![0.6, 0.0, 0.2], 40, true).unwrap();
    let eps = vanilla.epsilon_grid()[0];
    let grid: Vec<u64> = (1..=40).collect();
    let a = estimate_tail(&run_ensemble(&vanilla, 20_000, None), eps, &grid).unwrap();
    let b = estimate_tail(&run_ensemble(&clipped, 20_000, None), eps, &grid).unwrap();
    assert_eq!(a.exceed_count, b.exceed_count);
    assert_eq!(a.p_hat, b.p_hat);
    for run in 0..200 {
        let r = run_trajectory(&clipped, run);
        assert_eq!(r.clip_events, 0);
        assert_eq!(r.grad_norm_sq, run_trajectory(&vanilla, run).grad_norm_sq);
    }
}

#[test]
fn sampled_tail_dominates_the_stuck_event() {
    let config = lower_bound_instance(1.0, vec![0.3, 0.4], 15, true).unwrap();
    let eps = config.epsilon_grid()[0];
    let grid: Vec<u64> = (2..=15).collect();
    let tail = estimate_tail(&run_ensemble(&config, 1 << 18, None), eps, &grid).unwrap();
    for (i, &t) in grid.iter().enumerate() {
        assert!(tail.ci_high[i] >= lower_bound_exact_prob(t), "t = {t}");
    }
}

#[test]
fn enumeration_holds_for_other_starting_points() {
    for x1 in [vec![1.0], vec![0.01, -0.02], vec![0.5, 0.5, 0.5, 0.1]] {
        let config = lower_bound_instance(1.0, x1, 16, false).unwrap();
        for p in enumerate_stuck_probability(&config, 16).unwrap() {
            assert!(p.equals_closed_form(), "{p:?}");
        }
    }
}
