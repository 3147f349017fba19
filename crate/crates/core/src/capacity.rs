//! Spectral efficiency and closed-form transmit-covariance baselines.

use crate::channel::Dataset;
use crate::codebook::Codebook;
use crate::config::{Side, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::{
    c, hermitian_defect, hermitian_eigen_desc, hermitian_part, log2_det_hermitian_pd, trace_re,
    CMat,
};

/// Tolerances for the covariance invariants.
const HERMITIAN_TOL: f64 = 1e-10;
const PSD_TOL: f64 = -1e-9;
const TRACE_TOL: f64 = 1e-9;

/// A validated transmit covariance matrix: Hermitian, PSD, trace within the
/// power budget it was constructed under.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitCovariance {
    q: CMat,
}

impl TransmitCovariance {
    /// Validates `q` against the covariance invariants for power budget
    /// `rho`, then stores its Hermitian part.
    pub fn new(q: CMat, rho: f64) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::Dim(format!(
                "covariance must be square, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if hermitian_defect(&q) > HERMITIAN_TOL {
            return Err(Error::Domain(
                "covariance is not Hermitian within tolerance".into(),
            ));
        }
        let q = hermitian_part(&q);
        let min_eig = crate::linalg::min_eigenvalue(&q);
        if min_eig < PSD_TOL {
            return Err(Error::Domain(format!(
                "covariance is not PSD (min eigenvalue {min_eig:e})"
            )));
        }
        let trace = trace_re(&q);
        if trace > rho + TRACE_TOL {
            return Err(Error::Domain(format!(
                "covariance trace {trace} exceeds budget {rho}"
            )));
        }
        Ok(TransmitCovariance { q })
    }

    pub fn matrix(&self) -> &CMat {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn trace(&self) -> f64 {
        trace_re(&self.q)
    }

    /// Number of eigenvalues above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        let (vals, _) = hermitian_eigen_desc(&self.q);
        vals.iter().filter(|&&v| v > tol).count()
    }
}

/// Spectral efficiency for a raw covariance matrix (no invariant checks).
///
/// Computes `log2 det(I + H Q H^H / sigma_n2)` via Cholesky, falling back to
/// an eigenvalue sum when the factorization fails near singularity.
pub(crate) fn se_raw(h: &CMat, q: &CMat, sigma_n2: f64) -> Result<f64> {
    if h.ncols() != q.nrows() {
        return Err(Error::Dim(format!(
            "channel has {} columns but covariance is {}x{}",
            h.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let n_rx = h.nrows();
    let hq = h * q;
    let mut a = &hq * h.adjoint();
    a.scale_mut(1.0 / sigma_n2);
    for i in 0..n_rx {
        a[(i, i)] += c(1.0, 0.0);
    }
    let a = hermitian_part(&a);
    if let Some(v) = log2_det_hermitian_pd(&a) {
        return Ok(v.max(0.0));
    }
    // Near-singular fallback: eigenvalues of I + PSD are >= 1 in exact
    // arithmetic; anything materially below signals a non-PSD covariance.
    let (vals, _) = hermitian_eigen_desc(&a);
    let mut acc = 0.0;
    for v in vals {
        if v < 1.0 - 1e-6 {
            return Err(Error::Domain(format!(
                "effective receive matrix has eigenvalue {v} < 1; covariance not PSD"
            )));
        }
        acc += v.max(1.0).log2();
    }
    Ok(acc)
}

/// Spectral efficiency `r(H, Q) = log2 det(I + H Q H^H / sigma_n2)` in bits
/// per channel use.
pub fn spectral_efficiency(h: &CMat, q: &TransmitCovariance, sigma_n2: f64) -> Result<f64> {
    se_raw(h, q.matrix(), sigma_n2)
}

/// Exact water-filling over inverse-gain noise levels: returns the per-level
/// allocations `p_i = max(0, mu - levels[i])` with `sum p_i = budget`.
///
/// Levels must be finite; the water level `mu` is found by the sorted
/// breakpoint method rather than bisection.
pub(crate) fn waterfill_levels(levels: &[f64], budget: f64) -> (Vec<f64>, f64) {
    debug_assert!(!levels.is_empty());
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| levels[a].partial_cmp(&levels[b]).expect("finite levels"));

    // With the m cheapest levels active, mu = (budget + sum levels)/m; the
    // valid m is the largest one keeping every active allocation positive.
    let mut prefix = 0.0;
    let mut best = (1, (budget + levels[order[0]]) / 1.0);
    for m in 1..=order.len() {
        prefix += levels[order[m - 1]];
        let mu = (budget + prefix) / m as f64;
        if mu > levels[order[m - 1]] {
            best = (m, mu);
        } else {
            break;
        }
    }
    let (active, mu) = best;
    let mut p = vec![0.0; levels.len()];
    for &i in order.iter().take(active) {
        p[i] = mu - levels[i];
    }
    (p, mu)
}

/// Capacity-achieving covariance via SVD and water-filling; the power budget
/// `rho` is used exactly.
pub fn waterfilling_cov(h: &CMat, rho: f64, sigma_n2: f64) -> Result<TransmitCovariance> {
    let frob: f64 = h.iter().map(|z| z.norm_sqr()).sum();
    if frob == 0.0 {
        return Err(Error::DegenerateChannel(
            "cannot water-fill a zero channel".into(),
        ));
    }
    let n_tx = h.ncols();
    let svd = h.clone().svd(false, true);
    let v_t = svd.v_t.expect("v requested");
    let s = &svd.singular_values;

    let s_max = s.iter().copied().fold(0.0, f64::max);
    let tol = s_max * f64::EPSILON * h.nrows().max(n_tx) as f64;
    let kept: Vec<usize> = (0..s.len()).filter(|&i| s[i] > tol).collect();
    let levels: Vec<f64> = kept.iter().map(|&i| sigma_n2 / (s[i] * s[i])).collect();
    let (p, _mu) = waterfill_levels(&levels, rho);

    let mut q = CMat::zeros(n_tx, n_tx);
    for (slot, &i) in kept.iter().enumerate() {
        if p[slot] > 0.0 {
            let v_i = v_t.row(i).adjoint(); // right singular vector i
            q += (&v_i * v_i.adjoint()).scale(p[slot]);
        }
    }
    TransmitCovariance::new(q, rho)
}

/// Uniform power allocation `Q = (rho / n_tx) I`.
pub fn uniform_power_cov(config: &SystemConfig) -> TransmitCovariance {
    let q = CMat::identity(config.n_tx, config.n_tx).scale(config.rho / config.n_tx as f64);
    TransmitCovariance::new(q, config.rho).expect("scaled identity is always valid")
}

/// Equal power on the channel's dominant right singular vectors
/// (`rho / n_rx` per stream; rank-deficient channels spread the budget over
/// the nonzero directions that exist).
pub fn uniform_eigenspace_cov(h: &CMat, rho: f64) -> Result<TransmitCovariance> {
    let frob: f64 = h.iter().map(|z| z.norm_sqr()).sum();
    if frob == 0.0 {
        return Err(Error::DegenerateChannel(
            "channel has no nonzero singular directions".into(),
        ));
    }
    let n_rx = h.nrows();
    let n_tx = h.ncols();
    let svd = h.clone().svd(false, true);
    let v_t = svd.v_t.expect("v requested");
    let s = &svd.singular_values;
    let s_max = s.iter().copied().fold(0.0, f64::max);
    let tol = s_max * f64::EPSILON * h.nrows().max(n_tx) as f64;
    let kept: Vec<usize> = (0..s.len().min(n_rx)).filter(|&i| s[i] > tol).collect();
    let per_stream = rho / kept.len() as f64;

    let mut q = CMat::zeros(n_tx, n_tx);
    for &i in &kept {
        let v_i = v_t.row(i).adjoint();
        q += (&v_i * v_i.adjoint()).scale(per_stream);
    }
    TransmitCovariance::new(q, rho)
}

/// The exhaustive baseline codebook: one water-filling covariance per
/// training sample, in sample order.
pub fn all_train_data_codebook(ds: &Dataset, side: Side) -> Result<Codebook> {
    if ds.is_empty() {
        return Err(Error::Size("dataset is empty".into()));
    }
    let entries = ds
        .samples
        .iter()
        .map(|s| waterfilling_cov(s.channel(side), ds.config.rho, ds.config.sigma_n2))
        .collect::<Result<Vec<_>>>()?;
    Ok(Codebook {
        entries,
        m_bits: None,
        rho: ds.config.rho,
        rank_cap: ds.config.n_rx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sample_cn_matrix;
    use crate::rng::rng_from_seed;

    #[test]
    fn zero_channel_gives_zero_rate() {
        let h = CMat::zeros(2, 4);
        let q = TransmitCovariance::new(CMat::identity(4, 4), 4.0).unwrap();
        assert_eq!(spectral_efficiency(&h, &q, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn identity_case_gives_two_bits() {
        let h = CMat::identity(2, 2);
        // widen budget so the identity covariance is valid
        let q = TransmitCovariance::new(CMat::identity(2, 2), 2.0).unwrap();
        let r = spectral_efficiency(&h, &q, 1.0).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_power_rate_matches_eigen_oracle() {
        let mut rng = rng_from_seed(5);
        let h = sample_cn_matrix(&mut rng, 2, 4, 1.0);
        let rho = 4.0;
        let sigma_n2 = 0.5;
        let q = TransmitCovariance::new(CMat::identity(4, 4).scale(rho / 4.0), rho).unwrap();
        let got = spectral_efficiency(&h, &q, sigma_n2).unwrap();

        // independent eigen-oracle over H H^H
        let gram = &h * h.adjoint();
        let (vals, _) = hermitian_eigen_desc(&gram);
        let expect: f64 = vals
            .iter()
            .map(|&lam| (1.0 + lam * rho / (4.0 * sigma_n2)).log2())
            .sum();
        assert!((got - expect).abs() < 1e-10);
    }

    #[test]
    fn waterfilling_single_stream_takes_all_power() {
        // rank-one channel: one nonzero singular value
        let h = CMat::from_row_slice(1, 3, &[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let q = waterfilling_cov(&h, 3.0, 1.0).unwrap();
        assert!((q.trace() - 3.0).abs() < 1e-9);
        assert_eq!(q.rank(1e-9), 1);
        // all power on e1
        assert!((q.matrix()[(0, 0)].re - 3.0).abs() < 1e-9);
    }

    #[test]
    fn waterfilling_symmetric_split() {
        // two equal singular values, rho = 2 -> p = (1, 1)
        let h = CMat::from_row_slice(
            2,
            3,
            &[
                c(1.5, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(1.5, 0.0),
                c(0.0, 0.0),
            ],
        );
        let q = waterfilling_cov(&h, 2.0, 1.0).unwrap();
        assert!((q.matrix()[(0, 0)].re - 1.0).abs() < 1e-9);
        assert!((q.matrix()[(1, 1)].re - 1.0).abs() < 1e-9);
        assert!((q.trace() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn waterfilling_matches_grid_search_oracle() {
        // s^2 = (1.0, 0.1), rho = 1, sigma_n2 = 1
        let h = CMat::from_row_slice(
            2,
            2,
            &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.1f64.sqrt(), 0.0)],
        );
        let q = waterfilling_cov(&h, 1.0, 1.0).unwrap();
        let p0 = q.matrix()[(0, 0)].re;

        // 1-D grid search over (p, 1-p), then refine
        let objective = |p: f64| (1.0 + p).log2() + (1.0 + 0.1 * (1.0 - p)).log2();
        let mut best = (0.0, f64::MIN);
        let mut lo = 0.0;
        let mut hi = 1.0;
        for _ in 0..6 {
            let n = 1000;
            for i in 0..=n {
                let p = lo + (hi - lo) * i as f64 / n as f64;
                let v = objective(p);
                if v > best.1 {
                    best = (p, v);
                }
            }
            let w = (hi - lo) / 100.0;
            lo = (best.0 - w).max(0.0);
            hi = (best.0 + w).min(1.0);
        }
        assert!((p0 - best.0).abs() < 1e-6, "wf {} vs grid {}", p0, best.0);
    }

    #[test]
    fn waterfilling_kkt_conditions() {
        let mut rng = rng_from_seed(9);
        for _ in 0..50 {
            let h = sample_cn_matrix(&mut rng, 2, 5, 1.0);
            let rho = 2.3;
            let sigma_n2 = 0.7;
            let q = waterfilling_cov(&h, rho, sigma_n2).unwrap();
            assert!((q.trace() - rho).abs() < 1e-9 * rho);

            let svd = h.clone().svd(false, true);
            let s = &svd.singular_values;
            let v_t = svd.v_t.unwrap();
            // recover allocations p_i = v_i^H Q v_i
            let mut mu_active: Vec<f64> = Vec::new();
            let mut inactive_levels: Vec<f64> = Vec::new();
            for i in 0..s.len() {
                let v_i = v_t.row(i).adjoint();
                let p_i = (v_i.adjoint() * q.matrix() * &v_i)[(0, 0)].re;
                let level = sigma_n2 / (s[i] * s[i]);
                if p_i > 1e-9 {
                    mu_active.push(level + p_i);
                } else {
                    inactive_levels.push(level);
                }
            }
            let mu = mu_active[0];
            for m in &mu_active {
                assert!((m - mu).abs() < 1e-8);
            }
            for lv in &inactive_levels {
                assert!(*lv >= mu - 1e-8);
            }
        }
    }

    #[test]
    fn uniform_power_examples() {
        let cfg16 = SystemConfig::with_defaults(16, 4, 16).unwrap();
        let mut cfg16 = cfg16;
        cfg16.rho = 16.0;
        let q = uniform_power_cov(&cfg16);
        assert!((q.matrix() - CMat::identity(16, 16)).norm() < 1e-12);
        assert!((q.trace() - 16.0).abs() < 1e-12);

        let mut cfg4 = SystemConfig::with_defaults(4, 2, 4).unwrap();
        cfg4.rho = 2.0;
        let q = uniform_power_cov(&cfg4);
        assert!((q.matrix() - CMat::identity(4, 4).scale(0.5)).norm() < 1e-12);
    }

    #[test]
    fn uniform_eigenspace_single_receive_antenna() {
        let mut rng = rng_from_seed(13);
        let h = sample_cn_matrix(&mut rng, 1, 4, 1.0);
        let q = uniform_eigenspace_cov(&h, 2.0).unwrap();
        assert_eq!(q.rank(1e-9), 1);
        assert!((q.trace() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_eigenspace_orthonormal_rows() {
        // H with orthonormal rows: eigenvalues of Q are rho/n_rx, twice
        let h = CMat::from_row_slice(
            2,
            4,
            &[
                c(1.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(1.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
            ],
        );
        let q = uniform_eigenspace_cov(&h, 3.0).unwrap();
        let (vals, _) = hermitian_eigen_desc(q.matrix());
        assert!((vals[0] - 1.5).abs() < 1e-9);
        assert!((vals[1] - 1.5).abs() < 1e-9);
        assert!(vals[2].abs() < 1e-9);
    }

    #[test]
    fn uniform_eigenspace_never_beats_waterfilling() {
        let mut rng = rng_from_seed(17);
        for _ in 0..30 {
            let h = sample_cn_matrix(&mut rng, 2, 4, 1.0);
            let rho = 1.7;
            let sigma_n2 = 0.9;
            let wf = waterfilling_cov(&h, rho, sigma_n2).unwrap();
            let ue = uniform_eigenspace_cov(&h, rho).unwrap();
            let r_wf = spectral_efficiency(&h, &wf, sigma_n2).unwrap();
            let r_ue = spectral_efficiency(&h, &ue, sigma_n2).unwrap();
            assert!(r_ue <= r_wf + 1e-10);
        }
    }

    #[test]
    fn monotone_in_loewner_order() {
        let mut rng = rng_from_seed(21);
        for _ in 0..20 {
            let h = sample_cn_matrix(&mut rng, 2, 4, 1.0);
            let x = sample_cn_matrix(&mut rng, 4, 4, 1.0);
            let y = sample_cn_matrix(&mut rng, 4, 2, 1.0);
            let a = &x * x.adjoint(); // PSD
            let b = &a + &y * y.adjoint(); // a + PSD, so a <= b
            let ra = se_raw(&h, &a, 1.0).unwrap();
            let rb = se_raw(&h, &b, 1.0).unwrap();
            assert!(ra <= rb + 1e-10);
        }
    }

    #[test]
    fn rejects_non_psd_covariance() {
        let mut q = CMat::identity(3, 3);
        q[(0, 0)] = c(-0.5, 0.0);
        assert!(TransmitCovariance::new(q, 3.0).is_err());
    }

    #[test]
    fn rejects_overweight_trace() {
        let q = CMat::identity(3, 3).scale(2.0);
        assert!(TransmitCovariance::new(q, 3.0).is_err());
    }
}
