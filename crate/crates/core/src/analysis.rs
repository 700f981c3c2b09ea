//! One-phase success predictions for DVB1 on fully connected networks.
//!
//! On a complete graph every alive node is heard by everyone else, so a
//! corrosion phase reduces to a death process on the vector of alive counts
//! per level. The phase outcome is fixed as soon as that vector reaches a
//! halting pattern; [`markov_success`] computes the absorption probabilities
//! exactly and the remaining functions give closed-form lower bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{strict_plurality, Level};

/// Rounds after which every one of `n` nodes is dead with probability at
/// least `1 − ε` (survival probability 1/2): `⌈log₂(n/ε)⌉`.
pub fn rounds_until_all_dead(n: usize, epsilon: f64) -> Result<usize> {
    if n < 1 {
        return Err(Error::Domain("need at least one node".into()));
    }
    check_open_unit("epsilon", epsilon)?;
    let r = (n as f64 / epsilon).log2().ceil();
    Ok(r.max(0.0) as usize)
}

/// Default search horizon for [`lower_bound_two_event`].
pub fn default_r_max(n: usize) -> usize {
    rounds_until_all_dead(n.max(1), 1e-6).expect("valid arguments")
}

/// The two-event lower bound at a fixed number of rounds `r`.
///
/// Event one: at least two majority nodes are alive after `r` rounds while
/// every other level has at most one survivor in total. Event two: exactly
/// one majority node and nobody else survives.
pub fn two_event_bound_at(counts: &[usize], p: f64, r: usize) -> Result<f64> {
    check_open_unit("p", p)?;
    let m = strict_plurality(counts)
        .ok_or(Error::NoStrictPlurality)?
        .index();
    let pr = p.powi(r as i32);
    let q = 1.0 - pr;
    let none = |n: usize| q.powi(n as i32);
    // n·pʳ·(1−pʳ)^(n−1), zero when n = 0
    let one = |n: usize| {
        if n == 0 {
            0.0
        } else {
            n as f64 * pr * q.powi(n as i32 - 1)
        }
    };

    let others: Vec<usize> = counts
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != m)
        .map(|(_, &c)| c)
        .collect();
    let all_others_dead: f64 = others.iter().map(|&n| none(n)).product();
    let single_other: f64 = (0..others.len())
        .map(|j| {
            let rest: f64 = others
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, &n)| none(n))
                .product();
            one(others[j]) * rest
        })
        .sum();

    let nm = counts[m];
    let at_least_two = 1.0 - (none(nm) + one(nm));
    Ok(at_least_two * (all_others_dead + single_other) + one(nm) * all_others_dead)
}

/// Maximum of [`two_event_bound_at`] over `r = 0..=r_max`.
pub fn lower_bound_two_event(counts: &[usize], p: f64, r_max: usize) -> Result<f64> {
    let mut best = 0.0f64;
    for r in 0..=r_max {
        best = best.max(two_event_bound_at(counts, p, r)?);
    }
    Ok(best)
}

/// Closed-form bound for majority count `n_m`, runner-up count `n_second`
/// and `levels` levels:
/// `(1 − e^{−√(n_m/n₂)}) · e^{−(K−1)·n₂ / (√(n_m·n₂) − 1)}`.
pub fn lower_bound_closed(n_m: usize, n_second: usize, levels: usize) -> Result<f64> {
    if levels < 2 {
        return Err(Error::Domain(format!(
            "need at least two levels, got {levels}"
        )));
    }
    if n_second < 1 || n_m <= n_second {
        return Err(Error::Domain(format!(
            "need n_m > n_second >= 1, got ({n_m}, {n_second})"
        )));
    }
    let (a, b) = (n_m as f64, n_second as f64);
    let root = (a * b).sqrt();
    if root <= 1.0 {
        return Err(Error::Domain("sqrt(n_m * n_second) must exceed 1".into()));
    }
    let first = 1.0 - (-(a / b).sqrt()).exp();
    let second = (-((levels - 1) as f64) * b / (root - 1.0)).exp();
    Ok(first * second)
}

/// Majority-to-runner-up ratio above which the closed-form bound reaches
/// `1 − ε`: `¼(ln(1−ε) + √(ln²(1−ε) + 4K))²`.
pub fn required_majority_ratio(levels: usize, epsilon: f64) -> Result<f64> {
    if levels < 2 {
        return Err(Error::Domain(format!(
            "need at least two levels, got {levels}"
        )));
    }
    check_open_unit("epsilon", epsilon)?;
    let k = levels as f64;
    let a = (-epsilon).ln_1p();
    let s = (a * a + 4.0 * k).sqrt();
    // (a + s)²/4 rewritten as 4K²/(s − a)²; no cancellation as a → −∞
    Ok(4.0 * k * k / ((s - a) * (s - a)))
}

fn check_open_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {x} outside (0, 1)")))
    }
}

/// Alive nodes per level during a corrosion phase on a complete graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AliveState {
    pub counts: Vec<usize>,
}

impl AliveState {
    pub fn new(counts: Vec<usize>) -> Self {
        AliveState { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

impl From<&[usize]> for AliveState {
    fn from(counts: &[usize]) -> Self {
        AliveState::new(counts.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateClass {
    Transient,
    Win(Level),
    Draw,
}

/// Halting classification: all-zero is a draw; level `m` wins once it is
/// the only level alive, or once it has two or more alive against a single
/// survivor elsewhere.
pub fn classify(state: &AliveState) -> StateClass {
    classify_counts(&state.counts)
}

fn classify_counts(counts: &[usize]) -> StateClass {
    let nonzero: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] > 0).collect();
    match nonzero.as_slice() {
        [] => StateClass::Draw,
        [m] => StateClass::Win(Level::new(*m)),
        [a, b] => {
            let (ca, cb) = (counts[*a], counts[*b]);
            if ca >= 2 && cb == 1 {
                StateClass::Win(Level::new(*a))
            } else if cb >= 2 && ca == 1 {
                StateClass::Win(Level::new(*b))
            } else {
                StateClass::Transient
            }
        }
        _ => StateClass::Transient,
    }
}

/// One-round transition probability from transient `from` to `to`.
pub fn transition_prob(from: &AliveState, to: &AliveState, p: f64) -> Result<f64> {
    check_open_unit("p", p)?;
    if from.counts.len() != to.counts.len() {
        return Err(Error::LengthMismatch {
            expected: from.counts.len(),
            got: to.counts.len(),
        });
    }
    if classify(from) != StateClass::Transient {
        return Err(Error::Domain(format!(
            "{:?} is a halting state",
            from.counts
        )));
    }
    let max = from.counts.iter().copied().max().unwrap_or(0);
    let table = BinomialTable::new(max, p);
    Ok(from
        .counts
        .iter()
        .zip(&to.counts)
        .map(|(&n, &m)| if m > n { 0.0 } else { table.pmf(n, m) })
        .product())
}

/// `P(m of n survive)` with survival probability `p`, via log-factorials.
struct BinomialTable {
    rows: Vec<Vec<f64>>,
}

impl BinomialTable {
    fn new(max: usize, p: f64) -> Self {
        let mut log_fact = vec![0.0f64; max + 1];
        for i in 1..=max {
            log_fact[i] = log_fact[i - 1] + (i as f64).ln();
        }
        let (lp, lq) = (p.ln(), (-p).ln_1p());
        let rows = (0..=max)
            .map(|n| {
                (0..=n)
                    .map(|m| {
                        let log_c = log_fact[n] - log_fact[m] - log_fact[n - m];
                        (log_c + m as f64 * lp + (n - m) as f64 * lq).exp()
                    })
                    .collect()
            })
            .collect();
        BinomialTable { rows }
    }

    fn pmf(&self, n: usize, m: usize) -> f64 {
        self.rows[n][m]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovResult {
    pub win_prob: Vec<f64>,
    pub draw_prob: f64,
}

impl MarkovResult {
    pub fn win(&self, level: Level) -> f64 {
        self.win_prob[level.index()]
    }

    pub fn total(&self) -> f64 {
        self.win_prob.iter().sum::<f64>() + self.draw_prob
    }
}

/// Exact absorption probabilities of the death process started at
/// `initial`, where every alive node survives each round with probability
/// `p`.
///
/// Counts never increase, so with states in mixed-radix order every proper
/// successor precedes its source; self-loops are removed by dividing the
/// outgoing mass by `1 − p^total`.
pub fn markov_success(initial: &AliveState, p: f64) -> Result<MarkovResult> {
    check_open_unit("p", p)?;
    let k = initial.counts.len();
    if k == 0 {
        return Err(Error::Domain("need at least one level".into()));
    }
    let dims: Vec<usize> = initial.counts.iter().map(|&c| c + 1).collect();
    let states: usize = dims.iter().product();
    let width = k + 1; // win per level, then draw
    let table = BinomialTable::new(initial.counts.iter().copied().max().unwrap(), p);
    let mut values = vec![0.0f64; states * width];

    let mut x = vec![0usize; k];
    let mut y = vec![0usize; k];
    let mut acc = vec![0.0f64; width];
    for idx in 0..states {
        decode(idx, &dims, &mut x);
        let out = idx * width;
        match classify_counts(&x) {
            StateClass::Draw => values[out + k] = 1.0,
            StateClass::Win(l) => values[out + l.index()] = 1.0,
            StateClass::Transient => {
                acc.fill(0.0);
                y.fill(0);
                loop {
                    if y != x {
                        let w: f64 = (0..k).map(|i| table.pmf(x[i], y[i])).product();
                        let src = encode(&y, &dims) * width;
                        for j in 0..width {
                            acc[j] += w * values[src + j];
                        }
                    }
                    if !odometer(&mut y, &x) {
                        break;
                    }
                }
                let total: usize = x.iter().sum();
                let leave = 1.0 - p.powi(total as i32);
                for j in 0..width {
                    values[out + j] = acc[j] / leave;
                }
            }
        }
    }

    let root = encode(&initial.counts, &dims) * width;
    Ok(MarkovResult {
        win_prob: values[root..root + k].to_vec(),
        draw_prob: values[root + k],
    })
}

fn decode(mut idx: usize, dims: &[usize], out: &mut [usize]) {
    for i in (0..dims.len()).rev() {
        out[i] = idx % dims[i];
        idx /= dims[i];
    }
}

fn encode(x: &[usize], dims: &[usize]) -> usize {
    x.iter().zip(dims).fold(0, |acc, (&xi, &d)| acc * d + xi)
}

/// Advances `y` through the box `0..=bound`; false once it wraps.
fn odometer(y: &mut [usize], bound: &[usize]) -> bool {
    for i in (0..y.len()).rev() {
        if y[i] < bound[i] {
            y[i] += 1;
            return true;
        }
        y[i] = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_until_all_dead_examples() {
        assert_eq!(rounds_until_all_dead(100, 0.01).unwrap(), 14);
        assert_eq!(rounds_until_all_dead(1, 0.5).unwrap(), 1);
        assert_eq!(rounds_until_all_dead(2, 0.5).unwrap(), 2);
        assert!(rounds_until_all_dead(0, 0.5).is_err());
        assert!(rounds_until_all_dead(10, 1.0).is_err());
        assert!(rounds_until_all_dead(10, 0.0).is_err());
    }

    #[test]
    fn two_event_unopposed_majority() {
        assert_eq!(lower_bound_two_event(&[1, 0], 0.5, 10).unwrap(), 1.0);
        assert_eq!(lower_bound_two_event(&[5, 0, 0], 0.5, 10).unwrap(), 1.0);
        assert_eq!(two_event_bound_at(&[0, 7], 0.5, 0).unwrap(), 1.0);
    }

    #[test]
    fn two_event_rejects_tie() {
        assert!(matches!(
            lower_bound_two_event(&[50, 50], 0.5, 20),
            Err(Error::NoStrictPlurality)
        ));
    }

    #[test]
    fn two_event_dominates_closed_form() {
        let two = lower_bound_two_event(&[75, 25], 0.5, 20).unwrap();
        let closed = lower_bound_closed(75, 25, 2).unwrap();
        assert!(two > 0.0 && two < 1.0);
        assert!(two >= closed, "{two} vs {closed}");
    }

    #[test]
    fn closed_form_examples() {
        assert!((lower_bound_closed(75, 25, 2).unwrap() - 0.4558).abs() < 5e-4);
        let expected = (1.0 - (-2.0f64).exp()) * (-1.0f64).exp();
        assert!((lower_bound_closed(4, 1, 2).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.3181).abs() < 1e-4);
        assert!(lower_bound_closed(2, 2, 2).is_err());
        assert!(lower_bound_closed(3, 0, 2).is_err());
        assert!(lower_bound_closed(3, 1, 1).is_err());
    }

    #[test]
    fn closed_form_tends_to_one() {
        let mut last = 0.0;
        for ratio in [100, 1000, 10_000] {
            let v = lower_bound_closed(ratio * 4, 4, 2).unwrap();
            assert!(v > last);
            last = v;
        }
        assert!(last > 0.95);
    }

    #[test]
    fn required_majority_ratio_examples() {
        let r2 = required_majority_ratio(2, 0.1).unwrap();
        assert!((r2 - 1.856).abs() < 1e-3, "{r2}");
        assert!(required_majority_ratio(3, 0.1).unwrap() > r2);
        let tiny = required_majority_ratio(2, 1.0 - 1e-15).unwrap();
        assert!(tiny.is_finite() && tiny > 0.0 && tiny < 0.01);
        assert!(required_majority_ratio(1, 0.1).is_err());
        assert!(required_majority_ratio(2, 1.0).is_err());
    }

    #[test]
    fn classification() {
        let c = |v: &[usize]| classify(&AliveState::from(v));
        assert_eq!(c(&[3, 0]), StateClass::Win(Level::new(0)));
        assert_eq!(c(&[0, 0]), StateClass::Draw);
        assert_eq!(c(&[1, 1]), StateClass::Transient);
        assert_eq!(c(&[1, 2]), StateClass::Win(Level::new(1)));
        assert_eq!(c(&[2, 2]), StateClass::Transient);
        assert_eq!(c(&[2, 1, 1]), StateClass::Transient);
        assert_eq!(c(&[0, 4, 1]), StateClass::Win(Level::new(1)));
    }

    #[test]
    fn transition_examples() {
        let s = |v: &[usize]| AliveState::from(v);
        assert!((transition_prob(&s(&[2, 2]), &s(&[1, 1]), 0.5).unwrap() - 0.25).abs() < 1e-12);
        assert!((transition_prob(&s(&[2, 2]), &s(&[2, 2]), 0.5).unwrap() - 0.0625).abs() < 1e-12);
        assert_eq!(transition_prob(&s(&[1, 1]), &s(&[2, 1]), 0.5).unwrap(), 0.0);
        assert!(transition_prob(&s(&[3, 0]), &s(&[1, 0]), 0.5).is_err());
    }

    #[test]
    fn markov_one_against_one() {
        let r = markov_success(&AliveState::new(vec![1, 1]), 0.5).unwrap();
        for v in r.win_prob.iter().chain([&r.draw_prob]) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn markov_already_won() {
        let r = markov_success(&AliveState::new(vec![7, 0]), 0.5).unwrap();
        assert_eq!(r.win_prob, vec![1.0, 0.0]);
        assert_eq!(r.draw_prob, 0.0);
    }

    #[test]
    fn markov_ternary_sums_to_one() {
        let r = markov_success(&AliveState::new(vec![6, 4, 3]), 0.5).unwrap();
        assert!((r.total() - 1.0).abs() < 1e-12);
        assert!(r.win_prob[0] > r.win_prob[1] && r.win_prob[1] > r.win_prob[2]);
    }
}
