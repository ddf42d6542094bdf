use std::collections::BTreeSet;

use fedgauntlet::threat::{compute_attack_rounds, flip_labels, mark_adversaries, Window};
use proptest::prelude::*;

/// Window length: 30% of the rounds, rounded up, computed without floats.
fn window_len(r: usize) -> usize {
    (3 * r).div_ceil(10)
}

/// Searches every contiguous window of the right length and keeps the one
/// whose midpoint is nearest (R+1)/2, the earlier one on a tie.
fn mid_oracle(r: usize) -> BTreeSet<usize> {
    let len = window_len(r);
    let mut best: Option<(usize, usize)> = None;
    for start in 1..=r + 1 - len {
        // twice the distance between midpoints, kept integral
        let dist = (2 * start + len - 1).abs_diff(r + 1);
        if best.is_none_or(|(d, _)| dist < d) {
            best = Some((dist, start));
        }
    }
    let start = best.unwrap().1;
    (start..start + len).collect()
}

#[test]
fn window_sets_for_one_to_twenty_rounds() {
    for r in 1..=20 {
        assert_eq!(compute_attack_rounds(Window::Full, r), (1..=r).collect(), "FULL, R={r}");
        assert_eq!(
            compute_attack_rounds(Window::End, r),
            (r + 1 - window_len(r)..=r).collect(),
            "END, R={r}"
        );
        assert_eq!(compute_attack_rounds(Window::Mid, r), mid_oracle(r), "MID, R={r}");
    }
}

#[test]
fn ten_round_windows() {
    assert_eq!(compute_attack_rounds(Window::Mid, 10), BTreeSet::from([4, 5, 6]));
    assert_eq!(compute_attack_rounds(Window::End, 10), BTreeSet::from([8, 9, 10]));
}

proptest! {
    #[test]
    fn flips_exactly_the_requested_count(
        labels in prop::collection::vec(0usize..10, 0..300),
        fraction in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let out = flip_labels(&labels, fraction, 10, seed);
        prop_assert_eq!(out.len(), labels.len());
        let changed: Vec<usize> = (0..labels.len()).filter(|&i| out[i] != labels[i]).collect();
        prop_assert_eq!(changed.len(), (fraction * labels.len() as f64).round() as usize);
        for i in changed {
            prop_assert_eq!(out[i], (labels[i] + 1) % 10);
        }
    }

    #[test]
    fn adversary_count_is_rounded_share(clients in 1usize..200, ratio in 0.0f64..=1.0, seed in any::<u64>()) {
        let marked = mark_adversaries(clients, ratio, seed);
        prop_assert_eq!(marked.len(), (ratio * clients as f64).round() as usize);
        prop_assert!(marked.iter().all(|&k| k < clients));
        prop_assert_eq!(marked, mark_adversaries(clients, ratio, seed));
    }
}
