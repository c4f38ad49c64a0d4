//! Affinity propagation over the binary-variable model.
//!
//! Every block owns an N×N grid of hidden variables `c_ij` ("i picks j as its
//! exemplar"). Messages are stored densely, row-major, one table per message
//! kind. Rounds are synchronous: every message of a round is computed from the
//! previous round's values, so results do not depend on evaluation order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simfn::SimilarityMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    /// Weight kept from the previous round's message, in [0, 1). Lower
    /// values converge faster on well-separated data but oscillate on large
    /// groups of near-identical nodes, which capped tag overlap produces often.
    pub damping: f64,
    pub max_iter: usize,
    /// Rounds the exemplar set must stay unchanged to count as converged. Heavy
    /// damping swings slowly, so this should outlast half a swing.
    pub converge_window: usize,
}

impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            damping: 0.9,
            max_iter: 1000,
            converge_window: 30,
        }
    }
}

impl ApConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!("damping {} outside [0,1)", self.damping)));
        }
        if self.max_iter == 0 || self.converge_window == 0 {
            return Err(Error::Config("max_iter and converge_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Message tables of one block. `sigma` and `tau` stay zero under plain AP.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    pub n: usize,
    pub rho: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
    pub iteration: usize,
}

impl MessageState {
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    /// Sum of all messages entering `c_ij`, plus its local factor.
    #[inline]
    pub fn belief(&self, s: &SimilarityMatrix, i: usize, j: usize) -> f64 {
        let k = self.idx(i, j);
        s.message_score(i, j) + self.eta[k] + self.alpha[k] + self.tau[k]
    }
}

/// All tables zero, iteration 0.
pub fn init_messages(n: usize) -> MessageState {
    let zeros = vec![0.0; n * n];
    MessageState {
        n,
        rho: zeros.clone(),
        alpha: zeros.clone(),
        beta: zeros.clone(),
        eta: zeros.clone(),
        sigma: zeros.clone(),
        tau: zeros,
        iteration: 0,
    }
}

/// `λ·old + (1−λ)·new`, except that values at or beyond `saturation` in
/// magnitude are taken undamped. Hard constraint messages are huge; averaging
/// them in or out would leave a long tail of near-forbidden rounds.
#[inline]
pub(crate) fn damp(old: f64, computed: f64, lambda: f64, saturation: f64) -> f64 {
    if old.abs() >= saturation || computed.abs() >= saturation {
        computed
    } else {
        lambda * old + (1.0 - lambda) * computed
    }
}

/// η from the previous β: `η_ij = −max_{k≠j} β_ik`.
pub(crate) fn update_eta(state: &mut MessageState, lambda: f64, saturation: f64) {
    let n = state.n;
    for i in 0..n {
        let row = &state.beta[i * n..(i + 1) * n];
        let (mut best, mut best_at, mut second) = (f64::NEG_INFINITY, usize::MAX, f64::NEG_INFINITY);
        for (k, &v) in row.iter().enumerate() {
            if v > best {
                second = best;
                best = v;
                best_at = k;
            } else if v > second {
                second = v;
            }
        }
        for j in 0..n {
            let other = if j == best_at { second } else { best };
            // a single-node row has nothing to compete with
            let computed = if other == f64::NEG_INFINITY { 0.0 } else { -other };
            let k = i * n + j;
            state.eta[k] = damp(state.eta[k], computed, lambda, saturation);
        }
    }
}

/// ρ, α and β given fresh η and τ.
pub(crate) fn update_rho_alpha_beta(state: &mut MessageState, s: &SimilarityMatrix, lambda: f64, saturation: f64) {
    let n = state.n;
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            state.rho[k] = s.message_score(i, j) + state.eta[k] + state.tau[k];
        }
    }
    for j in 0..n {
        let mut positive = 0.0;
        for k in 0..n {
            if k != j {
                positive += state.rho[k * n + j].max(0.0);
            }
        }
        let self_rho = state.rho[j * n + j];
        for i in 0..n {
            let k = i * n + j;
            let computed = if i == j {
                positive
            } else {
                (self_rho + positive - state.rho[k].max(0.0)).min(0.0)
            };
            state.alpha[k] = damp(state.alpha[k], computed, lambda, saturation);
        }
    }
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            state.beta[k] = s.message_score(i, j) + state.alpha[k] + state.tau[k];
        }
    }
}

/// One synchronous AP round (η → ρ → α → β) with damping `lambda`.
pub fn ap_round(state: &mut MessageState, s: &SimilarityMatrix, lambda: f64) {
    debug_assert_eq!(state.n, s.len());
    update_eta(state, lambda, f64::INFINITY);
    update_rho_alpha_beta(state, s, lambda, f64::INFINITY);
    state.iteration += 1;
}

/// Exemplar set and assignment of one block, in block-local indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Sorted ascending.
    pub exemplars: Vec<usize>,
    /// `assign[i]` is the exemplar of node `i`; exemplars map to themselves.
    pub assign: Vec<usize>,
    pub net_similarity: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl Clustering {
    pub fn len(&self) -> usize {
        self.assign.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assign.is_empty()
    }

    /// Members of every cluster, keyed by exemplar in ascending order.
    pub fn clusters(&self) -> Vec<(usize, Vec<usize>)> {
        self.exemplars
            .iter()
            .map(|&e| (e, (0..self.assign.len()).filter(|&i| self.assign[i] == e).collect()))
            .collect()
    }

    /// True when the I and E constraints hold: one exemplar per node and every
    /// chosen exemplar picks itself.
    pub fn is_valid(&self) -> bool {
        let n = self.assign.len();
        self.assign.iter().all(|&e| e < n && self.assign[e] == e)
            && self.exemplars.windows(2).all(|w| w[0] < w[1])
            && (0..n).all(|i| (self.assign[i] == i) == self.exemplars.binary_search(&i).is_ok())
    }
}

/// Exemplars from diagonal beliefs (strictly positive), assignments by the
/// highest belief among them, lower index on ties. When no diagonal belief is
/// positive the largest one becomes the only exemplar.
pub fn recover_map(state: &MessageState, s: &SimilarityMatrix) -> Clustering {
    recover_with(state, s, None)
}

/// As [`recover_map`]; if `forbidden` is given, a node whose best exemplar
/// belief is below it becomes an exemplar of its own instead.
pub(crate) fn recover_with(state: &MessageState, s: &SimilarityMatrix, forbidden: Option<f64>) -> Clustering {
    let n = state.n;
    if n == 0 {
        return Clustering {
            exemplars: Vec::new(),
            assign: Vec::new(),
            net_similarity: 0.0,
            converged: true,
            iterations: state.iteration,
        };
    }
    let mut is_exemplar: Vec<bool> = (0..n).map(|j| state.belief(s, j, j) > 0.0).collect();
    if !is_exemplar.iter().any(|&e| e) {
        let mut best = 0;
        for j in 1..n {
            if state.belief(s, j, j) > state.belief(s, best, best) {
                best = j;
            }
        }
        is_exemplar[best] = true;
    }
    let exemplars: Vec<usize> = (0..n).filter(|&j| is_exemplar[j]).collect();
    let mut assign: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if is_exemplar[i] {
            continue;
        }
        let mut best = exemplars[0];
        let mut best_score = state.belief(s, i, best);
        for &e in &exemplars[1..] {
            let score = state.belief(s, i, e);
            if score > best_score {
                best = e;
                best_score = score;
            }
        }
        assign[i] = match forbidden {
            Some(limit) if best_score < limit => i,
            _ => best,
        };
    }
    let mut exemplars = exemplars;
    if forbidden.is_some() {
        exemplars = (0..n).filter(|&i| assign[i] == i).collect();
    }
    let mut clustering = Clustering {
        exemplars,
        assign,
        net_similarity: 0.0,
        converged: false,
        iterations: state.iteration,
    };
    clustering.net_similarity = net_similarity(&clustering, s);
    clustering
}

/// `Σ_i S(i, assign(i))`, preferences included for exemplars.
pub fn net_similarity(clustering: &Clustering, s: &SimilarityMatrix) -> f64 {
    clustering.assign.iter().enumerate().map(|(i, &e)| s.get(i, e)).sum()
}

/// Largest per-round move of any self-belief, relative to the similarity
/// scale, for a round to count towards convergence.
pub const SETTLE_TOL: f64 = 1e-7;

/// Tracks exemplar-set stability across rounds.
///
/// A round counts as stable when some self-belief is positive (the decoded
/// exemplars are a real decision, not the fallback), the exemplar set equals
/// the previous round's, and no self-belief moved by more than
/// [`SETTLE_TOL`]. The last condition keeps a slowly damped transient, during
/// which the set can sit still for a while, from passing as converged.
#[derive(Debug, Clone, Default)]
pub(crate) struct StabilityTracker {
    last: Option<Vec<usize>>,
    last_diag: Vec<f64>,
    stable_rounds: usize,
}

impl StabilityTracker {
    /// Record this round; returns the number of consecutive stable rounds.
    pub(crate) fn observe(&mut self, state: &MessageState, s: &SimilarityMatrix, exemplars: &[usize]) -> usize {
        let diag: Vec<f64> = (0..state.n).map(|j| state.belief(s, j, j)).collect();
        let decided = diag.iter().any(|&b| b > 0.0);
        let tol = SETTLE_TOL * (1.0 + s.max_score().abs());
        let settled =
            self.last_diag.len() == diag.len() && self.last_diag.iter().zip(&diag).all(|(a, b)| (a - b).abs() <= tol);
        if !decided {
            self.last = None;
            self.stable_rounds = 0;
        } else if settled && self.last.as_deref() == Some(exemplars) {
            self.stable_rounds += 1;
        } else {
            self.last = Some(exemplars.to_vec());
            self.stable_rounds = 1;
        }
        self.last_diag = diag;
        self.stable_rounds
    }
}

/// Run rounds until the exemplar set has been stable for
/// `converge_window` rounds or `max_iter` is hit; returns the final clustering.
/// See [`StabilityTracker`] for what counts as a stable round.
pub fn run_ap(s: &SimilarityMatrix, cfg: &ApConfig) -> Result<Clustering> {
    cfg.validate()?;
    let n = s.len();
    let mut state = init_messages(n);
    let mut tracker = StabilityTracker::default();
    loop {
        ap_round(&mut state, s, cfg.damping);
        let mut clustering = recover_map(&state, s);
        let stable = tracker.observe(&state, s, &clustering.exemplars);
        // a block of at most one node has a single possible configuration
        if n <= 1 || stable >= cfg.converge_window {
            clustering.converged = true;
            return Ok(clustering);
        }
        if state.iteration >= cfg.max_iter {
            log::debug!(
                "affinity propagation stopped at max_iter={} without converging",
                cfg.max_iter
            );
            return Ok(clustering);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::oracle::{oracle_exhaustive, Constraint, Instance};
    use proptest::prelude::*;

    fn matrix(n: usize, pref: f64, f: impl FnMut(usize, usize) -> f64) -> SimilarityMatrix {
        SimilarityMatrix::from_fn(n, pref, f)
    }

    fn oracle_value(s: &SimilarityMatrix) -> (Vec<usize>, f64) {
        let sol = oracle_exhaustive(&Instance::single_block(s.clone()), Constraint::None).unwrap();
        (sol.exemplar_of, sol.objective)
    }

    #[test]
    fn init_is_zero() {
        let st = init_messages(3);
        assert_eq!(st.rho.len(), 9);
        assert!(st.rho.iter().chain(&st.alpha).chain(&st.tau).all(|&v| v == 0.0));
        assert_eq!(st.iteration, 0);
        assert_eq!(init_messages(1).eta, vec![0.0]);
    }

    #[test]
    fn two_identical_points_merge() {
        let s = matrix(2, 0.5, |_, _| 0.9);
        // the four I/E-valid configurations: {0,1} singletons 1.0, merged 1.4 either way
        let (best, value) = oracle_value(&s);
        assert_eq!(value, 1.4);
        assert_eq!(best, vec![0, 0]);
        let c = run_ap(&s, &ApConfig::default()).unwrap();
        assert!(c.converged);
        assert_eq!(c.exemplars.len(), 1);
        assert_eq!(c.net_similarity, 1.4);
    }

    #[test]
    fn high_preference_gives_singletons() {
        let s = matrix(4, 1.5, |i, j| 0.1 + 0.2 * ((i + j) % 3) as f64);
        let (best, value) = oracle_value(&s);
        assert_eq!(best, vec![0, 1, 2, 3]);
        assert_eq!(value, 6.0);
        let c = run_ap(&s, &ApConfig::default()).unwrap();
        assert_eq!(c.exemplars, vec![0, 1, 2, 3]);
    }

    #[test]
    fn singleton_block() {
        let s = matrix(1, 0.0, |_, _| unreachable!());
        let c = run_ap(&s, &ApConfig::default()).unwrap();
        assert_eq!(c.exemplars, vec![0]);
        assert!(c.converged);
        assert_eq!(c.iterations, 1);
    }

    #[test]
    fn disjoint_birds_stay_apart() {
        // two same-stem leaves with no shared tags: local similarity 0
        let s = matrix(2, 0.5, |_, _| 0.0);
        let (best, value) = oracle_value(&s);
        assert_eq!((best, value), (vec![0, 1], 1.0));
        let c = run_ap(&s, &ApConfig::default()).unwrap();
        assert_eq!(c.exemplars, vec![0, 1]);
    }

    #[test]
    fn identical_five_low_preference() {
        let s = matrix(5, 0.1, |_, _| 0.8);
        let (best, value) = oracle_value(&s);
        assert_eq!(best, vec![0; 5]);
        assert!((value - 3.3).abs() < 1e-12);
        let c = run_ap(&s, &ApConfig::default()).unwrap();
        assert_eq!(c.exemplars.len(), 1);
        assert!((c.net_similarity - 3.3).abs() < 1e-12);
    }

    /// Messages cancelling the local factor everywhere, so every off-diagonal
    /// belief is exactly 0 and diagonal beliefs equal `values`.
    fn state_with_diagonal(values: &[f64]) -> (MessageState, SimilarityMatrix) {
        let n = values.len();
        let s = matrix(n, 0.0, |_, _| 0.0);
        let mut st = init_messages(n);
        for (i, &v) in values.iter().enumerate() {
            for j in 0..n {
                let k = st.idx(i, j);
                let target = if i == j { v } else { 0.0 };
                st.alpha[k] = target - s.message_score(i, j);
            }
        }
        (st, s)
    }

    #[test]
    fn recover_sign_rule() {
        let (st, s) = state_with_diagonal(&[0.2, -1.3]);
        let c = recover_map(&st, &s);
        assert_eq!(c.exemplars, vec![0]);
        assert_eq!(c.assign, vec![0, 0]);
        // exactly zero is not positive
        let (st, s) = state_with_diagonal(&[0.0, 0.3]);
        assert_eq!(recover_map(&st, &s).exemplars, vec![1]);
    }

    #[test]
    fn recover_fallback_and_ties() {
        let (st, s) = state_with_diagonal(&[-2.0, -0.5, -1.0]);
        let c = recover_map(&st, &s);
        assert_eq!(c.exemplars, vec![1]);
        assert!(c.is_valid());
        // node 1 equidistant between exemplars 0 and 2
        let (st, s) = state_with_diagonal(&[1.0, -1.0, 1.0]);
        assert_eq!(recover_map(&st, &s).assign, vec![0, 0, 2]);
    }

    #[test]
    fn net_similarity_examples() {
        let s = matrix(2, 0.5, |_, _| 0.9);
        let merged = Clustering {
            exemplars: vec![0],
            assign: vec![0, 0],
            net_similarity: 0.0,
            converged: true,
            iterations: 0,
        };
        assert_eq!(net_similarity(&merged, &s), 1.4);
        let s3 = matrix(3, 0.5, |_, _| 0.9);
        let singles = Clustering {
            exemplars: vec![0, 1, 2],
            assign: vec![0, 1, 2],
            ..merged.clone()
        };
        assert_eq!(net_similarity(&singles, &s3), 1.5);
        let empty = Clustering {
            exemplars: vec![],
            assign: vec![],
            ..merged
        };
        assert_eq!(net_similarity(&empty, &matrix(0, 0.0, |_, _| 0.0)), 0.0);
    }

    #[test]
    fn config_rejects_bad_damping() {
        let cfg = ApConfig {
            damping: 1.0,
            ..Default::default()
        };
        assert!(run_ap(&matrix(2, 0.5, |_, _| 0.5), &cfg).is_err());
    }

    fn arb_block() -> impl Strategy<Value = SimilarityMatrix> {
        (2usize..7).prop_flat_map(|n| {
            (prop::collection::vec(0.0f64..1.0, n * (n - 1) / 2), 0.0f64..1.0).prop_map(move |(v, p)| {
                let mut it = v.into_iter();
                matrix(n, p, |_, _| it.next().unwrap())
            })
        })
    }

    proptest! {
        #[test]
        fn map_is_always_valid(s in arb_block()) {
            let c = run_ap(&s, &ApConfig { max_iter: 60, ..Default::default() }).unwrap();
            prop_assert!(c.is_valid());
            prop_assert!(c.net_similarity.is_finite());
        }

        #[test]
        fn deterministic(s in arb_block()) {
            let cfg = ApConfig::default();
            prop_assert_eq!(run_ap(&s, &cfg).unwrap(), run_ap(&s, &cfg).unwrap());
        }

        #[test]
        fn forced_extremes(n in 2usize..6, v in 0.05f64..1.0) {
            let high = matrix(n, 1.0 + v, |_, _| v);
            let (all_single, _) = oracle_value(&high);
            prop_assert_eq!(&all_single, &(0..n).collect::<Vec<_>>());
            prop_assert_eq!(run_ap(&high, &ApConfig::default()).unwrap().exemplars, all_single);

            let low = matrix(n, -(n as f64) * v, |_, _| v);
            let (single, _) = oracle_value(&low);
            prop_assert!(single.iter().all(|&e| e == single[0]));
            let c = run_ap(&low, &ApConfig::default()).unwrap();
            prop_assert_eq!(c.exemplars.len(), 1);
        }
    }
}
