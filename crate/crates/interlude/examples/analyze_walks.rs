//! Evaluates the liveness and safety random walks: acceptance failure decay
//! over rounds, and the reversal-probability limit versus its closed form.

use interlude::analysis::{
    epsilon, linear_fit, liveness_failure_sequence, safety_limit, safety_limit_closed_form,
    WalkParams,
};

fn main() {
    let eps = epsilon(1.0 / 600.0, 40.0).expect("valid rates");
    println!("epsilon = {eps:.5}");

    let kappa = 4;
    let params = WalkParams::new(eps, kappa, 400).expect("valid walk");
    let failures = liveness_failure_sequence(&params);
    let rs: Vec<usize> = (5 * kappa..=20 * kappa).collect();
    let xs: Vec<f64> = rs.iter().map(|&r| r as f64).collect();
    let ys: Vec<f64> = rs.iter().map(|&r| failures[r].ln()).collect();
    let (slope, _, r2) = linear_fit(&xs, &ys);
    println!("liveness failure: P = {:.3e} at r = {}, {:.3e} at r = {}", failures[rs[0]], rs[0], failures[*rs.last().unwrap()], rs.last().unwrap());
    println!("log-linear decay: slope {slope:.5} per round, r2 = {r2:.4}");

    for kappa in [4usize, 14] {
        let params = WalkParams::new(eps, kappa, 4_000).expect("valid walk");
        let (_, limit) = safety_limit(&params);
        let closed = safety_limit_closed_form(eps, kappa);
        println!(
            "safety limit kappa={kappa:>2}: walk {limit:.6e}, closed form {closed:.6e}"
        );
    }
}
