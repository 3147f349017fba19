//! Codebook learning: Lloyd clustering with projected-gradient center updates.
//!
//! The learner alternates between assigning every training channel to the
//! codebook entry maximizing its spectral efficiency and re-optimizing each
//! entry over its cluster by gradient ascent with an Armijo backtracking rule,
//! projecting onto the trace/rank constraint set after every step.

use crate::capacity::{se_raw, waterfilling_cov, TransmitCovariance};
use crate::channel::Dataset;
use crate::config::Side;
use crate::error::{Error, Result};
use crate::linalg::{c, frob_inner, hermitian_eigen_desc, hermitian_part, CMat};
use crate::rng::rng_from_seed;
use rand::Rng;

/// An ordered set of transmit covariance entries under a shared power budget
/// and rank cap.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub entries: Vec<TransmitCovariance>,
    /// Feedback bit width; `Some(m)` requires exactly `2^m` entries.
    /// `None` marks unstructured codebooks (e.g. the all-train baseline).
    pub m_bits: Option<u32>,
    pub rho: f64,
    pub rank_cap: usize,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Size("codebook has no entries".into()));
        }
        if let Some(m) = self.m_bits {
            if self.entries.len() != 1usize << m {
                return Err(Error::Size(format!(
                    "codebook with m_bits={} must have {} entries, has {}",
                    m,
                    1usize << m,
                    self.entries.len()
                )));
            }
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.trace() > self.rho + 1e-9 {
                return Err(Error::Domain(format!("entry {i} exceeds power budget")));
            }
            // eigenvalues beyond the rank cap must be negligible
            let (vals, _) = hermitian_eigen_desc(e.matrix());
            if vals.len() > self.rank_cap && vals[self.rank_cap] > 1e-9 * self.rho {
                return Err(Error::Domain(format!(
                    "entry {i} violates rank cap {}",
                    self.rank_cap
                )));
            }
        }
        Ok(())
    }
}

/// Disjoint cluster membership over the training set.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub member_indices: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    fn from_best(best: &[usize], k: usize) -> Self {
        let mut member_indices = vec![Vec::new(); k];
        for (i, &b) in best.iter().enumerate() {
            member_indices[b].push(i);
        }
        ClusterAssignment { member_indices }
    }
}

/// Controls for the projected-gradient center update.
#[derive(Debug, Clone)]
pub struct PgdOptions {
    pub max_pgd_iters: usize,
    /// Armijo step shrink factor in (0, 1).
    pub armijo_beta: f64,
    /// Armijo sufficient-increase fraction in (0, 1).
    pub armijo_sigma: f64,
    pub alpha_init: f64,
    /// Stop when the projected-gradient residual falls below this.
    pub grad_tol: f64,
    /// Stop when the relative objective change falls below this.
    pub obj_tol: f64,
    pub max_backtracks: usize,
}

impl Default for PgdOptions {
    fn default() -> Self {
        PgdOptions {
            max_pgd_iters: 500,
            armijo_beta: 0.5,
            armijo_sigma: 0.1,
            alpha_init: 1.0,
            grad_tol: 1e-9,
            obj_tol: 1e-7,
            max_backtracks: 30,
        }
    }
}

impl PgdOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_pgd_iters > 0
            && self.max_backtracks > 0
            && self.alpha_init > 0.0
            && self.grad_tol > 0.0
            && self.obj_tol > 0.0
            && (0.0..1.0).contains(&self.armijo_beta)
            && self.armijo_beta > 0.0
            && (0.0..1.0).contains(&self.armijo_sigma)
            && self.armijo_sigma > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid PGD options".into()))
        }
    }
}

/// What to do with a cluster that loses all members.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyClusterPolicy {
    /// Re-seed the entry at the training channel with the worst selected
    /// spectral efficiency.
    RespawnAtWorstChannel,
    /// Leave the entry untouched.
    KeepPrevious,
}

/// Controls for the outer Lloyd loop.
#[derive(Debug, Clone)]
pub struct LloydOptions {
    pub max_lloyd_iters: usize,
    /// Convergence threshold on the relative change of the mean selected
    /// spectral efficiency.
    pub conv_tol: f64,
    pub empty_cluster_policy: EmptyClusterPolicy,
    pub seed: u64,
}

impl LloydOptions {
    pub fn new(seed: u64) -> Self {
        LloydOptions {
            max_lloyd_iters: 50,
            conv_tol: 1e-5,
            empty_cluster_policy: EmptyClusterPolicy::RespawnAtWorstChannel,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_lloyd_iters == 0 || !(self.conv_tol > 0.0) {
            return Err(Error::Config("invalid Lloyd options".into()));
        }
        Ok(())
    }
}

/// Mean selected spectral efficiency after initialization and after every
/// Lloyd iteration.
#[derive(Debug, Clone)]
pub struct LloydTrace {
    pub mean_objective: Vec<f64>,
    pub iterations: usize,
}

/// Per-channel argmax entry and the mean of the selected values.
fn assignment_with_objective(
    channels: &[&CMat],
    entries: &[TransmitCovariance],
    sigma_n2: f64,
) -> (Vec<usize>, f64) {
    let mut best = Vec::with_capacity(channels.len());
    let mut acc = 0.0;
    for h in channels {
        let mut best_k = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (k, q) in entries.iter().enumerate() {
            let v = se_raw(h, q.matrix(), sigma_n2).expect("codebook entries are valid");
            if v > best_v {
                best_v = v;
                best_k = k;
            }
        }
        best.push(best_k);
        acc += best_v;
    }
    (best, acc / channels.len() as f64)
}

/// Assigns each training channel of `side` to the codebook entry maximizing
/// its spectral efficiency; ties go to the lowest entry index.
pub fn assign_clusters(
    ds: &Dataset,
    side: Side,
    cb: &Codebook,
    sigma_n2: f64,
) -> ClusterAssignment {
    let channels = ds.channels(side);
    let (best, _) = assignment_with_objective(&channels, &cb.entries, sigma_n2);
    ClusterAssignment::from_best(&best, cb.k())
}

/// Gradient of the summed spectral efficiency of `cluster` at `q`:
/// `1/(sigma_n2 ln 2) * sum_H H^H (I + H Q H^H / sigma_n2)^{-1} H`.
///
/// Returns the plain sum over the cluster (not the mean); the result is
/// Hermitian PSD, so an ascent step `q + alpha * g` stays PSD for any
/// `alpha >= 0`.
pub fn sum_rate_gradient(q: &CMat, cluster: &[&CMat], sigma_n2: f64) -> CMat {
    let n_tx = q.nrows();
    let mut g = CMat::zeros(n_tx, n_tx);
    for h in cluster {
        let n_rx = h.nrows();
        let mut a = (*h * q) * h.adjoint();
        a.scale_mut(1.0 / sigma_n2);
        for i in 0..n_rx {
            a[(i, i)] += c(1.0, 0.0);
        }
        let a = hermitian_part(&a);
        let chol = a.cholesky().expect("I + PSD is positive definite");
        let x = chol.solve(h); // (I + H Q H^H / s)^{-1} H
        g += h.adjoint() * x;
    }
    g.scale_mut(1.0 / (sigma_n2 * std::f64::consts::LN_2));
    hermitian_part(&g)
}

/// Projects a Hermitian matrix onto `{Q PSD, trace(Q) <= rho, rank(Q) <=
/// rank_cap}` in the eigenbasis: keep the `rank_cap` largest eigenvalues,
/// clip at zero, and if their sum still exceeds `rho`, subtract the common
/// water level that makes the clipped sum exactly `rho`.
pub fn project_trace_rank(q: &CMat, rho: f64, rank_cap: usize) -> TransmitCovariance {
    let (vals, vecs) = hermitian_eigen_desc(&hermitian_part(q));
    let n = vals.len();
    let kept = rank_cap.min(n);
    let lam = &vals[..kept];

    let clipped_sum: f64 = lam.iter().map(|v| v.max(0.0)).sum();
    let p: Vec<f64> = if clipped_sum <= rho {
        lam.iter().map(|v| v.max(0.0)).collect()
    } else {
        // sorted-breakpoint search for theta with sum max(lam - theta, 0) = rho
        let mut prefix = 0.0;
        let mut theta = 0.0;
        for m in 1..=kept {
            prefix += lam[m - 1];
            let t = (prefix - rho) / m as f64;
            if t < lam[m - 1] {
                theta = t;
            } else {
                break;
            }
        }
        lam.iter().map(|v| (v - theta).max(0.0)).collect()
    };

    let mut out = CMat::zeros(n, n);
    for (i, &p_i) in p.iter().enumerate() {
        if p_i > 0.0 {
            let v_i = vecs.column(i);
            out += (v_i * v_i.adjoint()).scale(p_i);
        }
    }
    TransmitCovariance::new(out, rho).expect("projection output satisfies the invariants")
}

fn mean_rate(q: &CMat, cluster: &[&CMat], sigma_n2: f64) -> f64 {
    let sum: f64 = cluster
        .iter()
        .map(|h| se_raw(h, q, sigma_n2).expect("ascent iterates stay PSD"))
        .sum();
    sum / cluster.len() as f64
}

/// Maximizes the cluster-mean spectral efficiency by projected gradient
/// ascent from `q_init`; the returned objective never falls below the
/// objective at `q_init`.
pub fn update_center(
    cluster: &[&CMat],
    q_init: &TransmitCovariance,
    opts: &PgdOptions,
    rho: f64,
    rank_cap: usize,
    sigma_n2: f64,
) -> TransmitCovariance {
    assert!(!cluster.is_empty(), "empty clusters are handled by the caller");
    opts.validate().expect("PGD options validated upstream");
    let scale = 1.0 / cluster.len() as f64;
    let mut q = q_init.matrix().clone();
    let mut f_q = mean_rate(&q, cluster, sigma_n2);

    for _ in 0..opts.max_pgd_iters {
        let g = sum_rate_gradient(&q, cluster, sigma_n2).scale(scale);

        // projected-gradient residual as the stationarity measure
        let probe = project_trace_rank(&(&q + g.scale(opts.alpha_init)), rho, rank_cap);
        let residual = (probe.matrix() - &q).norm() / opts.alpha_init;
        if residual <= opts.grad_tol {
            break;
        }

        let mut alpha = opts.alpha_init;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let cand = project_trace_rank(&(&q + g.scale(alpha)), rho, rank_cap);
            let step = cand.matrix() - &q;
            let expected = frob_inner(&g, &step).re;
            let f_cand = mean_rate(cand.matrix(), cluster, sigma_n2);
            if f_cand >= f_q + opts.armijo_sigma * expected.max(0.0) && f_cand >= f_q {
                accepted = Some((cand, f_cand));
                break;
            }
            alpha *= opts.armijo_beta;
        }
        let Some((cand, f_cand)) = accepted else {
            break; // no acceptable step; q is (numerically) stationary
        };
        let rel_change = (f_cand - f_q).abs() / f_q.abs().max(1.0);
        q = cand.matrix().clone();
        f_q = f_cand;
        if rel_change < opts.obj_tol {
            break;
        }
    }

    TransmitCovariance::new(q, rho).expect("iterates remain feasible")
}

/// Farthest-point initialization over normalized channel Grams
/// `H^H H / ||H||_F^2`; returns the chosen training indices.
fn init_center_indices<R: Rng>(channels: &[&CMat], k: usize, rng: &mut R) -> Vec<usize> {
    let grams: Vec<CMat> = channels
        .iter()
        .map(|h| {
            let frob2: f64 = h.iter().map(|z| z.norm_sqr()).sum();
            (h.adjoint() * *h).scale(1.0 / frob2.max(f64::MIN_POSITIVE))
        })
        .collect();

    let first = rng.random_range(0..channels.len());
    let mut chosen = vec![first];
    let mut min_dist: Vec<f64> = grams.iter().map(|g| (g - &grams[first]).norm()).collect();
    while chosen.len() < k {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        chosen.push(best);
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = (&grams[i] - &grams[best]).norm();
            if nd < *d {
                *d = nd;
            }
        }
    }
    chosen
}

/// Learns a `2^m_bits`-entry codebook from the `side` channels of
/// `ds_train`. See [`learn_codebook_traced`] for the per-iteration objective.
pub fn learn_codebook(
    ds_train: &Dataset,
    side: Side,
    m_bits: u32,
    lloyd: &LloydOptions,
    pgd: &PgdOptions,
    sigma_n2: f64,
) -> Result<Codebook> {
    learn_codebook_traced(ds_train, side, m_bits, lloyd, pgd, sigma_n2).map(|(cb, _)| cb)
}

/// As [`learn_codebook`], additionally returning the mean selected spectral
/// efficiency after initialization and after each Lloyd iteration.
pub fn learn_codebook_traced(
    ds_train: &Dataset,
    side: Side,
    m_bits: u32,
    lloyd: &LloydOptions,
    pgd: &PgdOptions,
    sigma_n2: f64,
) -> Result<(Codebook, LloydTrace)> {
    lloyd.validate()?;
    pgd.validate()?;
    let k = 1usize << m_bits;
    if ds_train.len() < k {
        return Err(Error::Size(format!(
            "need at least {k} training samples for m_bits={m_bits}, have {}",
            ds_train.len()
        )));
    }
    let rho = ds_train.config.rho;
    let rank_cap = ds_train.config.n_rx;
    let channels = ds_train.channels(side);

    let mut rng = rng_from_seed(lloyd.seed);
    let seeds = init_center_indices(&channels, k, &mut rng);
    let mut entries: Vec<TransmitCovariance> = seeds
        .iter()
        .map(|&i| waterfilling_cov(channels[i], rho, sigma_n2))
        .collect::<Result<Vec<_>>>()?;

    let (mut best, mut objective) = assignment_with_objective(&channels, &entries, sigma_n2);
    let mut trace = vec![objective];
    let mut iterations = 0;

    for _it in 0..lloyd.max_lloyd_iters {
        iterations += 1;
        let mut members = ClusterAssignment::from_best(&best, k).member_indices;

        if lloyd.empty_cluster_policy == EmptyClusterPolicy::RespawnAtWorstChannel {
            let selected: Vec<f64> = channels
                .iter()
                .zip(best.iter())
                .map(|(h, &b)| se_raw(h, entries[b].matrix(), sigma_n2).expect("valid entries"))
                .collect();
            let mut used = vec![false; channels.len()];
            for k_empty in 0..k {
                if !members[k_empty].is_empty() {
                    continue;
                }
                let worst = selected
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !used[*i])
                    .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite rates"))
                    .map(|(i, _)| i)
                    .expect("training set is nonempty");
                used[worst] = true;
                entries[k_empty] = waterfilling_cov(channels[worst], rho, sigma_n2)?;
                members[best[worst]].retain(|&i| i != worst);
                members[k_empty].push(worst);
            }
        }

        for (k_idx, member) in members.iter().enumerate() {
            if member.is_empty() {
                continue; // KeepPrevious
            }
            let cluster: Vec<&CMat> = member.iter().map(|&i| channels[i]).collect();
            entries[k_idx] =
                update_center(&cluster, &entries[k_idx], pgd, rho, rank_cap, sigma_n2);
        }

        let (new_best, new_objective) = assignment_with_objective(&channels, &entries, sigma_n2);
        best = new_best;
        let rel = (new_objective - objective).abs() / objective.abs().max(1.0);
        objective = new_objective;
        trace.push(objective);
        if rel < lloyd.conv_tol {
            break;
        }
    }

    let cb = Codebook {
        entries,
        m_bits: Some(m_bits),
        rho,
        rank_cap,
    };
    cb.validate()?;
    Ok((
        cb,
        LloydTrace {
            mean_objective: trace,
            iterations,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sample_cn_matrix;

    #[test]
    fn gradient_of_zero_channel_is_zero() {
        let h = CMat::zeros(2, 4);
        let q = CMat::identity(4, 4);
        let g = sum_rate_gradient(&q, &[&h], 1.0);
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn gradient_scalar_case_matches_formula() {
        // single 1x1 channel h, scalar q
        let h_val = c(0.8, -0.3);
        let q_val = 0.7;
        let sigma_n2 = 0.4;
        let h = CMat::from_element(1, 1, h_val);
        let q = CMat::from_element(1, 1, c(q_val, 0.0));
        let g = sum_rate_gradient(&q, &[&h], sigma_n2);
        let h2 = h_val.norm_sqr();
        let expect = h2 / (sigma_n2 * std::f64::consts::LN_2 * (1.0 + h2 * q_val / sigma_n2));
        assert!((g[(0, 0)].re - expect).abs() < 1e-12);
        assert!(g[(0, 0)].im.abs() < 1e-15);
    }

    #[test]
    fn gradient_is_hermitian_psd() {
        let mut rng = rng_from_seed(31);
        let hs: Vec<CMat> = (0..3).map(|_| sample_cn_matrix(&mut rng, 2, 4, 1.0)).collect();
        let refs: Vec<&CMat> = hs.iter().collect();
        let x = sample_cn_matrix(&mut rng, 4, 4, 1.0);
        let q = &x * x.adjoint();
        let g = sum_rate_gradient(&q, &refs, 0.8);
        assert!(crate::linalg::hermitian_defect(&g) < 1e-12);
        assert!(crate::linalg::min_eigenvalue(&g) > -1e-12);
    }

    #[test]
    fn ascent_step_preserves_psd() {
        let mut rng = rng_from_seed(37);
        for _ in 0..10 {
            let hs: Vec<CMat> = (0..2).map(|_| sample_cn_matrix(&mut rng, 2, 4, 1.0)).collect();
            let refs: Vec<&CMat> = hs.iter().collect();
            let x = sample_cn_matrix(&mut rng, 4, 4, 1.0);
            let q = &x * x.adjoint();
            let g = sum_rate_gradient(&q, &refs, 1.0);
            for &alpha in &[0.0, 0.1, 1.0, 10.0] {
                let stepped = &q + g.scale(alpha);
                assert!(crate::linalg::min_eigenvalue(&stepped) >= -1e-9);
            }
        }
    }

    #[test]
    fn projection_is_identity_on_feasible_input() {
        let mut rng = rng_from_seed(41);
        let x = sample_cn_matrix(&mut rng, 4, 2, 1.0);
        let q = (&x * x.adjoint()).scale(0.1); // PSD, rank 2, small trace
        let rho = crate::linalg::trace_re(&q) + 1.0;
        let p = project_trace_rank(&q, rho, 2);
        assert!((p.matrix() - &q).norm() < 1e-10);
    }

    #[test]
    fn projection_rescales_single_eigenvalue() {
        let rho = 1.4;
        let mut q = CMat::zeros(3, 3);
        q[(0, 0)] = c(2.0 * rho, 0.0);
        let p = project_trace_rank(&q, rho, 2);
        assert!((p.matrix()[(0, 0)].re - rho).abs() < 1e-12);
        assert!((p.trace() - rho).abs() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = rng_from_seed(43);
        for _ in 0..20 {
            let a = sample_cn_matrix(&mut rng, 4, 4, 1.0);
            let h = hermitian_part(&a);
            let once = project_trace_rank(&h, 1.0, 2);
            let twice = project_trace_rank(once.matrix(), 1.0, 2);
            assert!((once.matrix() - twice.matrix()).norm() < 1e-10);
        }
    }

    #[test]
    fn update_center_is_monotone_and_stable_under_copies() {
        let mut rng = rng_from_seed(47);
        let h = sample_cn_matrix(&mut rng, 2, 4, 1.0);
        let rho = 1.5;
        let sigma_n2 = 0.6;
        let init = TransmitCovariance::new(CMat::identity(4, 4).scale(rho / 4.0), rho).unwrap();
        let opts = PgdOptions::default();

        let single = update_center(&[&h], &init, &opts, rho, 2, sigma_n2);
        let copies = vec![&h, &h, &h];
        let multi = update_center(&copies, &init, &opts, rho, 2, sigma_n2);
        assert!((single.matrix() - multi.matrix()).norm() < 1e-9);

        let f_init = se_raw(&h, init.matrix(), sigma_n2).unwrap();
        let f_end = se_raw(&h, single.matrix(), sigma_n2).unwrap();
        assert!(f_end >= f_init - 1e-12);
    }

    #[test]
    fn update_center_reaches_waterfilling_on_single_channel() {
        let mut rng = rng_from_seed(53);
        for _ in 0..5 {
            let h = sample_cn_matrix(&mut rng, 2, 4, 1.0);
            let rho = 2.0;
            let sigma_n2 = 0.5;
            let init =
                TransmitCovariance::new(CMat::identity(4, 4).scale(rho / 4.0), rho).unwrap();
            let got = update_center(&[&h], &init, &PgdOptions::default(), rho, 2, sigma_n2);
            let opt = waterfilling_cov(&h, rho, sigma_n2).unwrap();
            let f_got = se_raw(&h, got.matrix(), sigma_n2).unwrap();
            let f_opt = se_raw(&h, opt.matrix(), sigma_n2).unwrap();
            assert!(
                f_opt - f_got < 1e-4,
                "PGD ended {f_got}, waterfilling optimum {f_opt}"
            );
        }
    }
}
