//! Monte Carlo race between a withholding attacker finishing a private round
//! and the honest network finishing its own, swept over the attacker's
//! head start h.

use interlude::analysis::{withholding_race_montecarlo, RaceVariant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let (f, k, alpha, delta) = (2usize, 128usize, 0.3, 30.0);
    let lambda = k as f64 / 560.0;
    let beta = 1.0 / 600.0;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for variant in [RaceVariant::OneLessSeries, RaceVariant::FullSeries] {
        let mut worst = 0.0f64;
        for h in (1..k).step_by(9) {
            let est = withholding_race_montecarlo(
                f, k, h, alpha, lambda, beta, delta, 20_000, variant, &mut rng,
            );
            worst = worst.max(est.p_joint);
        }
        println!("{variant:?}: worst joint probability over h = {worst:.4}");
    }
}
