//! Drives the neighbor-threshold bandit with a synthetic distance signal
//! that improves up to `k = 9` and worsens beyond it, and prints the
//! trajectory until the arm freezes.
//!
//! Usage: cargo run --release --example bandit_thresholds

use ramgnn::bandit::{BanditConfig, BanditState};

fn main() {
    let mut bandit = BanditState::new(BanditConfig::default(), &[30]);
    for gamma in 1..=200 {
        let k = bandit.arm(0).k() as f64;
        let and = 1.0 + (k - 9.0).abs() / 10.0;
        let r = bandit.observe(0, gamma, and);
        println!("gamma {gamma:>3}  k {k:>2}  AND {and:.2}  reward {r:?}");
        if bandit.all_terminated() {
            break;
        }
    }
    let arm = bandit.arm(0);
    println!("frozen at k = {} (capped: {})", arm.k(), arm.hit_cap());
}
