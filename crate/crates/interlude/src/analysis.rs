//! Numeric security and performance analysis: the delay-bias random walk in
//! both boundary regimes, its closed forms, the frontrunning bound, the
//! withholding-race Monte Carlo, reward-scheme utilities, and the
//! throughput/finality formulas.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnalysisError {
    #[error("negative parameter: {0}")]
    NegativeParameter(&'static str),
    #[error("epsilon {0} outside [0, 0.5)")]
    EpsilonRange(f64),
    #[error("beta*delta product {0} out of admissible range")]
    RateDelayProduct(f64),
    #[error("fee {fee} exceeds the cap {gamma}")]
    FeeAboveCap { fee: f64, gamma: f64 },
}

/// Delay bias: the expected number of series-rate arrivals within one
/// propagation delay, expressed as `e^{beta*delta} - 1`.
pub fn epsilon(beta: f64, delta: f64) -> Result<f64, AnalysisError> {
    if beta < 0.0 {
        return Err(AnalysisError::NegativeParameter("beta"));
    }
    if delta < 0.0 {
        return Err(AnalysisError::NegativeParameter("delta"));
    }
    Ok((beta * delta).exp_m1())
}

/// Parameters of the biased three-branch walk tracking the series-length gap
/// between two competing chains.
#[derive(Clone, Copy, Debug)]
pub struct WalkParams {
    pub epsilon: f64,
    pub kappa: usize,
    /// Horizon in rounds.
    pub t_max: usize,
}

impl WalkParams {
    pub fn new(epsilon: f64, kappa: usize, t_max: usize) -> Result<WalkParams, AnalysisError> {
        if !(0.0..0.5).contains(&epsilon) {
            return Err(AnalysisError::EpsilonRange(epsilon));
        }
        Ok(WalkParams {
            epsilon,
            kappa,
            t_max,
        })
    }

    /// Step weights (down, stay, up). The down and up weights are the
    /// round-outcome bounds; the remaining mass is a self-loop so the three
    /// weights form a distribution.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        (0.5 - self.epsilon, 0.25, 0.25 + self.epsilon)
    }
}

/// Dense table of absorption probabilities `P(t, z)` for `t <= t_max` over
/// the reachable band of gap values.
#[derive(Clone, Debug)]
pub struct WalkTable {
    pub z_min: i64,
    /// `values[t][i]` is `P(t, z_min + i)`.
    pub values: Vec<Vec<f64>>,
}

impl WalkTable {
    /// Out-of-band states read as 0.
    pub fn get(&self, t: usize, z: i64) -> f64 {
        let Some(row) = self.values.get(t) else {
            return 0.0;
        };
        let idx = z - self.z_min;
        if idx < 0 {
            return 0.0;
        }
        row.get(idx as usize).copied().unwrap_or(0.0)
    }

    /// The `P(t, 0)` column.
    pub fn zero_column(&self) -> Vec<f64> {
        (0..self.values.len()).map(|t| self.get(t, 0)).collect()
    }
}

/// Probability of the gap reaching `-kappa` (the watched chain pulling
/// clear) within `t` rounds. Boundaries: `P(t, -kappa) = 1`,
/// `P(t, t - kappa + 1) = 0`.
pub fn liveness_walk(params: &WalkParams) -> WalkTable {
    let kappa = params.kappa as i64;
    walk_table(
        params,
        -kappa,
        params.t_max as i64 - kappa + 1,
        |z, _t| z <= -kappa,
        |z, t| z >= t - kappa + 1,
    )
}

/// Probability of the gap reaching `+kappa` (the rival chain overtaking by
/// the full acceptance depth) within `t` rounds. Boundaries:
/// `P(t, kappa) = 1`, `P(t, kappa + 1 - t) = 0`.
pub fn safety_walk(params: &WalkParams) -> WalkTable {
    let kappa = params.kappa as i64;
    walk_table(
        params,
        kappa + 1 - params.t_max as i64,
        kappa,
        |z, _t| z >= kappa,
        |z, t| z <= kappa + 1 - t,
    )
}

fn walk_table(
    params: &WalkParams,
    z_min: i64,
    z_max: i64,
    absorb: impl Fn(i64, i64) -> bool,
    dead: impl Fn(i64, i64) -> bool,
) -> WalkTable {
    let (down, stay, up) = params.coefficients();
    let width = (z_max - z_min + 1).max(0) as usize;
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(params.t_max + 1);
    for t in 0..=params.t_max as i64 {
        let mut row = vec![0.0f64; width];
        for (i, cell) in row.iter_mut().enumerate() {
            let z = z_min + i as i64;
            *cell = if absorb(z, t) {
                1.0
            } else if dead(z, t) || t == 0 {
                0.0
            } else {
                let prev = &values[(t - 1) as usize];
                let read = |zz: i64| -> f64 {
                    let idx = zz - z_min;
                    if idx < 0 {
                        return 0.0;
                    }
                    prev.get(idx as usize).copied().unwrap_or(0.0)
                };
                (down * read(z - 1) + stay * read(z) + up * read(z + 1)).clamp(0.0, 1.0)
            };
        }
        values.push(row);
    }
    WalkTable { z_min, values }
}

/// `P(t, 0)` for the safety regime computed with rolling rows (constant
/// memory in `t`), together with its fixed-point estimate at the horizon.
pub fn safety_limit(params: &WalkParams) -> (Vec<f64>, f64) {
    let (down, stay, up) = params.coefficients();
    let kappa = params.kappa as i64;
    let z_min = kappa + 1 - params.t_max as i64;
    let width = (kappa - z_min + 1).max(1) as usize;
    let zero_idx = (0 - z_min) as usize;
    let mut prev = vec![0.0f64; width];
    let mut sequence = Vec::with_capacity(params.t_max + 1);
    for t in 0..=params.t_max as i64 {
        let mut row = vec![0.0f64; width];
        for (i, cell) in row.iter_mut().enumerate() {
            let z = z_min + i as i64;
            *cell = if z >= kappa {
                1.0
            } else if z <= kappa + 1 - t || t == 0 {
                0.0
            } else {
                let read = |zz: i64| -> f64 {
                    let idx = zz - z_min;
                    if idx < 0 {
                        return 0.0;
                    }
                    prev.get(idx as usize).copied().unwrap_or(0.0)
                };
                (down * read(z - 1) + stay * read(z) + up * read(z + 1)).clamp(0.0, 1.0)
            };
        }
        sequence.push(row.get(zero_idx).copied().unwrap_or(0.0));
        prev = row;
    }
    let limit = sequence.last().copied().unwrap_or(0.0);
    (sequence, limit)
}

/// The liveness failure probability after `r` rounds: `1 - P(r, 0)`. This is
/// the quantity with the `e^{-Omega(r - kappa)}` decay.
pub fn liveness_failure_sequence(params: &WalkParams) -> Vec<f64> {
    liveness_walk(params)
        .zero_column()
        .into_iter()
        .map(|p| 1.0 - p)
        .collect()
}

/// Characteristic decay base of the liveness regime.
pub fn liveness_p(epsilon: f64) -> f64 {
    ((16.0 * epsilon * epsilon + 12.0 * epsilon + 3.0).sqrt() - 1.0) / (4.0 * epsilon + 1.0)
}

/// Amplitude of the liveness closed form.
pub fn liveness_amplitude(epsilon: f64) -> f64 {
    let p = liveness_p(epsilon);
    (2.0 - 4.0 * epsilon) / (3.0 - 4.0 * epsilon - 2.0 * p)
}

/// Asymptotic closed form `A * p^{z - t}`, clamped to [0, 1]. At `z = t` the
/// exponent degenerates to 0 and the clamp returns 1.
pub fn liveness_closed_form(t: i64, z: i64, params: &WalkParams) -> f64 {
    let p = liveness_p(params.epsilon);
    let a = liveness_amplitude(params.epsilon);
    (a * p.powi((z - t) as i32)).clamp(0.0, 1.0)
}

/// Decay base of the safety regime (distinct from the liveness base).
pub fn safety_p(epsilon: f64) -> f64 {
    2.0 * (1.0 - 2.0 * epsilon) / (1.0 + 4.0 * epsilon)
}

/// Closed-form safety failure limit `p^{-kappa}`.
pub fn safety_limit_closed_form(epsilon: f64, kappa: usize) -> f64 {
    safety_p(epsilon).powi(-(kappa as i32))
}

/// Fraction of fast-connected mining power `m` (top percentile), the delay
/// gap `d` between fast and slow nodes, and the usual rate parameters.
#[derive(Clone, Copy, Debug)]
pub struct FairnessParams {
    pub m_top: f64,
    pub m_bottom: f64,
    pub d: f64,
    pub beta: f64,
    pub delta: f64,
}

/// Upper bound on the probability that a fast node mines a transaction into
/// a block before the slow nodes have even received it:
/// `m_top * beta * d / (1 - beta*delta)`.
pub fn frontrunning_bound(fp: &FairnessParams) -> Result<f64, AnalysisError> {
    let product = fp.beta * fp.delta;
    if product >= 1.0 {
        return Err(AnalysisError::RateDelayProduct(product));
    }
    Ok(fp.m_top * fp.beta * fp.d / (1.0 - product))
}

/// Which shape the attacker's series-block race uses: one fewer series block
/// than the honest chain, or the same number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RaceVariant {
    OneLessSeries,
    FullSeries,
}

#[derive(Clone, Copy, Debug)]
pub struct RaceEstimate {
    /// Pr[the honest network supplies the h reused blocks before the
    /// attacker finishes its own k−h].
    pub p_build: f64,
    /// Pr[attacker's finished fork arrives within the honest margin].
    pub p_deliver: f64,
    /// Product of the two probabilities, the bound used in the argument.
    pub p_joint: f64,
    pub se_build: f64,
    pub se_deliver: f64,
    pub se_joint: f64,
    pub samples: usize,
}

fn erlang_sample<R: Rng>(rng: &mut R, shape: usize, rate: f64) -> f64 {
    if shape == 0 {
        return 0.0;
    }
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    Gamma::new(shape as f64, 1.0 / rate)
        .expect("positive shape and scale")
        .sample(rng)
}

fn stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Monte Carlo race for the withholding argument over `f` honest rounds: the
/// attacker holds `h` of the k-set's blocks and must (4) finish the missing
/// `k - h` parallel blocks before the honest network finishes `f` whole
/// rounds' worth, and (5) get its completed fork delivered no later than
/// `delta` after the honest chain's own completion. Completion times are
/// Erlang races at the respective rates.
#[allow(clippy::too_many_arguments)]
pub fn withholding_race_montecarlo<R: Rng>(
    f: usize,
    k: usize,
    h: usize,
    alpha: f64,
    lambda: f64,
    beta: f64,
    delta: f64,
    samples: usize,
    variant: RaceVariant,
    rng: &mut R,
) -> RaceEstimate {
    let adv_series_shape = match variant {
        RaceVariant::OneLessSeries => f.saturating_sub(1),
        RaceVariant::FullSeries => f,
    };
    let mut n_build = 0usize;
    let mut n_deliver = 0usize;
    for _ in 0..samples {
        let t_honest = erlang_sample(rng, f * h, lambda);
        let t_adv = erlang_sample(rng, k - h, alpha * lambda);
        let t_honest_full = erlang_sample(rng, f * k, lambda);
        let series_honest = erlang_sample(rng, 1, beta);
        let series_adv = erlang_sample(rng, adv_series_shape, alpha * beta);
        // the attacker reuses h honest blocks, so those must exist before
        // its own k-h are done; with no hash power its fork never arrives
        n_build += (t_honest <= t_adv) as usize;
        n_deliver +=
            (t_adv + series_adv <= t_honest_full + series_honest + delta) as usize;
    }
    let p_build = n_build as f64 / samples as f64;
    let p_deliver = n_deliver as f64 / samples as f64;
    let se_build = stderr(p_build, samples);
    let se_deliver = stderr(p_deliver, samples);
    RaceEstimate {
        p_build,
        p_deliver,
        p_joint: p_build * p_deliver,
        se_build,
        se_deliver,
        // first-order error propagation for the product
        se_joint: ((p_build * se_deliver).powi(2) + (p_deliver * se_build).powi(2)).sqrt(),
        samples,
    }
}

/// Reward scheme calibrated so block rewards exactly offset the expected
/// mining cost at cost rate `eta_cost` currency per second.
#[derive(Clone, Copy, Debug)]
pub struct RewardScheme {
    pub eta_cost: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Fee cap per block.
    pub gamma: f64,
    /// Fee floor required for strict incentive compatibility.
    pub rho: f64,
}

impl RewardScheme {
    pub fn r_series(&self) -> f64 {
        self.eta_cost / self.beta
    }

    pub fn r_parallel(&self) -> f64 {
        self.eta_cost / self.lambda
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Play {
    /// Follows the protocol; its blocks are accepted with certainty.
    Honest,
    /// Any deviating strategy with the given acceptance probability.
    Dummy,
}

/// Expected utility per block: the block reward cancels the expected mining
/// cost by construction, leaving `accept_prob * fee`.
pub fn expected_utility(
    play: Play,
    scheme: &RewardScheme,
    accept_prob: f64,
    fee: f64,
) -> Result<f64, AnalysisError> {
    if fee > scheme.gamma {
        return Err(AnalysisError::FeeAboveCap {
            fee,
            gamma: scheme.gamma,
        });
    }
    let p = match play {
        Play::Honest => 1.0,
        Play::Dummy => accept_prob.clamp(0.0, 1.0),
    };
    Ok(p * fee)
}

/// Best-case expected throughput in blocks per second:
/// `beta * (k + 1) / (2 - beta*delta)`.
pub fn throughput_best_case(beta: f64, delta: f64, k: usize) -> Result<f64, AnalysisError> {
    let product = beta * delta;
    if product >= 2.0 {
        return Err(AnalysisError::RateDelayProduct(product));
    }
    Ok(beta * (k as f64 + 1.0) / (2.0 - product))
}

/// Expected seconds until a transaction is accepted at depth `kappa`:
/// `kappa * (2/beta - delta)`.
pub fn time_to_finality(kappa: usize, beta: f64, delta: f64) -> f64 {
    kappa as f64 * (2.0 / beta - delta)
}

/// Least-squares line fit; returns (slope, intercept, r_squared).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

/// Exhaustive path-enumeration oracle for the walk tables: walks every
/// three-branch step sequence of length `t`, crediting the probability mass
/// of paths that hit the absorbing level first. Exponential in `t`; for
/// cross-checking small tables only.
pub mod oracle {
    use super::WalkParams;

    fn enumerate(
        z: i64,
        remaining: i64,
        weight: f64,
        coeffs: (f64, f64, f64),
        absorb: &dyn Fn(i64, i64) -> bool,
        dead: &dyn Fn(i64, i64) -> bool,
    ) -> f64 {
        if absorb(z, remaining) {
            return weight;
        }
        if dead(z, remaining) || remaining == 0 {
            return 0.0;
        }
        let (down, stay, up) = coeffs;
        enumerate(z - 1, remaining - 1, weight * down, coeffs, absorb, dead)
            + enumerate(z, remaining - 1, weight * stay, coeffs, absorb, dead)
            + enumerate(z + 1, remaining - 1, weight * up, coeffs, absorb, dead)
    }

    pub fn liveness(params: &WalkParams, t: usize, z: i64) -> f64 {
        let kappa = params.kappa as i64;
        enumerate(
            z,
            t as i64,
            1.0,
            params.coefficients(),
            &|z, _t| z <= -kappa,
            &|z, t| z >= t - kappa + 1,
        )
    }

    pub fn safety(params: &WalkParams, t: usize, z: i64) -> f64 {
        let kappa = params.kappa as i64;
        enumerate(
            z,
            t as i64,
            1.0,
            params.coefficients(),
            &|z, _t| z >= kappa,
            &|z, t| z <= kappa + 1 - t,
        )
    }
}
