//! Pilot observations, codebook index selection, and the LS / OMP channel
//! estimators.

use crate::capacity::se_raw;
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::linalg::{c, sample_cn_matrix, solve_lstsq, vec_row_major, CMat, CVec};
use crate::rng::rng_from_seed;

/// A received pilot block together with the pilot matrix that produced it.
#[derive(Debug, Clone)]
pub struct PilotObservation {
    /// Received block, `n_rx x n_p`.
    pub y: CMat,
    /// Pilot matrix, `n_tx x n_p`; every column has squared norm `rho`.
    pub p: CMat,
    pub sigma_n2: f64,
}

/// Picks the codebook entry maximizing the spectral efficiency of `h`
/// (ties go to the lowest index).
pub fn select_index(h: &CMat, cb: &Codebook, sigma_n2: f64) -> Result<usize> {
    if cb.entries.is_empty() {
        return Err(Error::Size("codebook has no entries".into()));
    }
    let mut best_k = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, q) in cb.entries.iter().enumerate() {
        let v = se_raw(h, q.matrix(), sigma_n2)?;
        if v > best_v {
            best_v = v;
            best_k = k;
        }
    }
    Ok(best_k)
}

/// DFT-submatrix pilot block: entry `(m, p)` is
/// `sqrt(rho / n_tx) * exp(j 2 pi m p / n_p)`.
///
/// For `n_p = n_tx` the rows are orthogonal and `P P^H = rho * I`.
pub fn pilot_matrix(n_tx: usize, n_p: usize, rho: f64) -> CMat {
    let amp = (rho / n_tx as f64).sqrt();
    CMat::from_fn(n_tx, n_p, |m, p| {
        let arg = 2.0 * std::f64::consts::PI * (m * p) as f64 / n_p as f64;
        c(amp * arg.cos(), amp * arg.sin())
    })
}

/// Pilot transmission `Y = H P + N` with i.i.d. circularly-symmetric
/// Gaussian noise columns of covariance `sigma_n2 * I`; deterministic for a
/// fixed seed.
pub fn observe(h: &CMat, p: &CMat, sigma_n2: f64, seed: u64) -> Result<PilotObservation> {
    if h.ncols() != p.nrows() {
        return Err(Error::Dim(format!(
            "channel has {} tx antennas but pilots have {} rows",
            h.ncols(),
            p.nrows()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let noise = sample_cn_matrix(&mut rng, h.nrows(), p.ncols(), sigma_n2);
    Ok(PilotObservation {
        y: h * p + noise,
        p: p.clone(),
        sigma_n2,
    })
}

/// Least-squares estimate `Y P^H (P P^H)^{-1}`; requires `n_p >= n_tx` so
/// the pilot matrix has full row rank.
pub fn ls_estimate(obs: &PilotObservation) -> Result<CMat> {
    let (n_tx, n_p) = obs.p.shape();
    if n_p < n_tx {
        return Err(Error::Rank(format!(
            "LS needs n_p >= n_tx, got n_p={n_p}, n_tx={n_tx}"
        )));
    }
    let gram = &obs.p * obs.p.adjoint();
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Rank("pilot matrix is row-rank deficient".into()))?;
    // Y P^H (P P^H)^{-1}  ==  (chol_solve(P Y^H))^H
    let rhs = &obs.p * obs.y.adjoint();
    Ok(chol.solve(&rhs).adjoint())
}

/// Oversampled-DFT dictionaries for the transmitter and receiver arrays.
#[derive(Debug, Clone)]
pub struct SparseDictionary {
    /// `n_tx x (o * n_tx)`, unit-norm columns.
    pub d_tx: CMat,
    /// `n_rx x (o * n_rx)`, unit-norm columns.
    pub d_rx: CMat,
    pub oversampling: usize,
}

impl SparseDictionary {
    pub fn atom_count(&self) -> usize {
        self.d_rx.ncols() * self.d_tx.ncols()
    }

    /// Atom `idx` as an `n_rx x n_tx` matrix (`d_rx[g_rx] * d_tx[g_tx]^T`
    /// under row-major vectorization of the Kronecker dictionary).
    pub fn atom_matrix(&self, idx: usize) -> CMat {
        let g_rx = idx / self.d_tx.ncols();
        let g_tx = idx % self.d_tx.ncols();
        let u = self.d_rx.column(g_rx);
        let v = self.d_tx.column(g_tx);
        CMat::from_fn(u.len(), v.len(), |r, t| u[r] * v[t])
    }
}

fn dft_grid(n: usize, oversampling: usize) -> CMat {
    let cols = n * oversampling;
    let norm = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, cols, |m, g| {
        let arg = 2.0 * std::f64::consts::PI * (m * g) as f64 / cols as f64;
        c(norm * arg.cos(), norm * arg.sin())
    })
}

/// Builds the per-array oversampled-DFT dictionaries; at `oversampling = 1`
/// both factors are unitary DFT matrices.
pub fn build_dictionary(n_rx: usize, n_tx: usize, oversampling: usize) -> Result<SparseDictionary> {
    if oversampling < 1 {
        return Err(Error::Domain("oversampling must be at least 1".into()));
    }
    if n_rx == 0 || n_tx == 0 {
        return Err(Error::Dim("antenna counts must be positive".into()));
    }
    Ok(SparseDictionary {
        d_tx: dft_grid(n_tx, oversampling),
        d_rx: dft_grid(n_rx, oversampling),
        oversampling,
    })
}

/// Runs OMP for all sparsity orders `1..=s_max`, returning the estimate and
/// residual norm after each order. Greedy selections are shared, so entry
/// `s-1` equals an independent `omp_estimate` run with sparsity `s`.
fn omp_path(obs: &PilotObservation, dict: &SparseDictionary, s_max: usize) -> Result<Vec<CMat>> {
    if s_max == 0 {
        return Err(Error::Size("sparsity must be at least 1".into()));
    }
    if s_max > dict.atom_count() {
        return Err(Error::Size(format!(
            "sparsity {s_max} exceeds dictionary size {}",
            dict.atom_count()
        )));
    }
    let (n_rx, n_p) = obs.y.shape();
    if dict.d_rx.nrows() != n_rx || dict.d_tx.nrows() != obs.p.nrows() {
        return Err(Error::Dim("dictionary does not match observation".into()));
    }

    // Sensed atoms: atom matrix propagated through the pilots.
    let atoms: Vec<CMat> = (0..dict.atom_count()).map(|a| dict.atom_matrix(a)).collect();
    let sensed: Vec<CMat> = atoms.iter().map(|m| m * &obs.p).collect();
    let sensed_vec: Vec<CVec> = sensed.iter().map(vec_row_major).collect();
    let y_vec = vec_row_major(&obs.y);

    let mut residual = obs.y.clone();
    let mut support: Vec<usize> = Vec::new();
    let mut estimates = Vec::with_capacity(s_max);

    for _ in 0..s_max {
        // max |correlation| against the residual; ties and already-selected
        // atoms resolve to the lowest fresh index
        let mut best = None;
        let mut best_score = f64::NEG_INFINITY;
        for (a, s) in sensed.iter().enumerate() {
            if support.contains(&a) {
                continue;
            }
            let score = crate::linalg::frob_inner(s, &residual).norm();
            if score > best_score {
                best_score = score;
                best = Some(a);
            }
        }
        support.push(best.expect("dictionary larger than sparsity"));

        // least-squares refit over the whole support
        let mut a_mat = CMat::zeros(n_rx * n_p, support.len());
        for (col, &atom) in support.iter().enumerate() {
            a_mat.set_column(col, &sensed_vec[atom]);
        }
        let coeff = solve_lstsq(&a_mat, &y_vec);

        let mut h_est = CMat::zeros(n_rx, dict.d_tx.nrows());
        for (col, &atom) in support.iter().enumerate() {
            h_est += atoms[atom].map(|x| x * coeff[col]);
        }
        residual = &obs.y - &h_est * &obs.p;
        estimates.push(h_est);
    }
    Ok(estimates)
}

/// Orthogonal matching pursuit with `s` greedy atom selections, each followed
/// by a least-squares refit on the selected support.
pub fn omp_estimate(obs: &PilotObservation, dict: &SparseDictionary, s: usize) -> Result<CMat> {
    Ok(omp_path(obs, dict, s)?.pop().expect("s >= 1"))
}

/// Genie-aided OMP: runs sparsity orders `1..=s_max` and returns the
/// estimate closest to the true channel in Frobenius norm.
pub fn genie_omp_estimate(
    obs: &PilotObservation,
    dict: &SparseDictionary,
    h_true: &CMat,
    s_max: usize,
) -> Result<CMat> {
    let path = omp_path(obs, dict, s_max)?;
    Ok(path
        .into_iter()
        .min_by(|a, b| {
            let ea = (a - h_true).norm();
            let eb = (b - h_true).norm();
            ea.partial_cmp(&eb).expect("finite errors")
        })
        .expect("path is nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::{uniform_power_cov, waterfilling_cov};
    use crate::config::SystemConfig;
    use crate::linalg::{frob_inner, sample_cn_matrix};
    use crate::rng::rng_from_seed;

    #[test]
    fn pilot_matrix_two_point_case() {
        let p = pilot_matrix(2, 2, 2.0);
        let expect = [
            c(1.0, 0.0),
            c(1.0, 0.0),
            c(1.0, 0.0),
            c(-1.0, 0.0),
        ];
        for (i, e) in p.iter().zip(expect.iter()) {
            assert!((i - e).norm() < 1e-12);
        }
    }

    #[test]
    fn pilot_matrix_is_row_orthogonal_at_full_count() {
        let rho = 3.0;
        let p = pilot_matrix(8, 8, rho);
        let gram = &p * p.adjoint();
        assert!((gram - CMat::identity(8, 8).scale(rho)).norm() < 1e-12);
        // column norms are sqrt(rho)
        for col in 0..8 {
            let n2: f64 = p.column(col).iter().map(|z| z.norm_sqr()).sum();
            assert!((n2 - rho).abs() < 1e-12);
        }
    }

    #[test]
    fn pilot_matrix_elementwise_formula() {
        let p = pilot_matrix(4, 3, 1.0);
        let amp = 0.5;
        assert_eq!(p.shape(), (4, 3));
        for m in 0..4 {
            for q in 0..3 {
                let arg = 2.0 * std::f64::consts::PI * (m * q) as f64 / 3.0;
                let expect = c(amp * arg.cos(), amp * arg.sin());
                assert!((p[(m, q)] - expect).norm() < 1e-12);
            }
        }
        // first row all equal to sqrt(rho/4)
        for q in 0..3 {
            assert!((p[(0, q)] - c(amp, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn observe_is_noiseless_and_deterministic() {
        let mut rng = rng_from_seed(3);
        let h = sample_cn_matrix(&mut rng, 2, 4, 1.0);
        let p = pilot_matrix(4, 4, 1.0);
        let clean = observe(&h, &p, 0.0, 5).unwrap();
        assert!((&clean.y - &h * &p).norm() < 1e-15);

        let a = observe(&h, &p, 0.3, 5).unwrap();
        let b = observe(&h, &p, 0.3, 5).unwrap();
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn noise_covariance_monte_carlo() {
        // h = 0 so Y = N; sample covariance over 10^4 columns within 5%
        let h = CMat::zeros(2, 4);
        let p = pilot_matrix(4, 10_000, 1.0);
        let sigma_n2 = 0.7;
        let obs = observe(&h, &p, sigma_n2, 11).unwrap();
        let cols = obs.y.ncols() as f64;
        let cov = &obs.y * obs.y.adjoint() / c(cols, 0.0);
        let target = CMat::identity(2, 2).scale(sigma_n2);
        for i in 0..2 {
            for j in 0..2 {
                let diff = (cov[(i, j)] - target[(i, j)]).norm();
                assert!(diff < 0.05 * sigma_n2, "cov deviates: {diff}");
            }
        }
    }

    #[test]
    fn ls_is_exact_without_noise() {
        let mut rng = rng_from_seed(7);
        let h = sample_cn_matrix(&mut rng, 2, 4, 1.0);
        let p = pilot_matrix(4, 4, 2.0);
        let obs = observe(&h, &p, 0.0, 0).unwrap();
        let est = ls_estimate(&obs).unwrap();
        assert!((&est - &h).norm() < 1e-9 * h.norm());
    }

    #[test]
    fn ls_identity_channel() {
        // Y = I * P = P
        let p = pilot_matrix(4, 6, 1.5);
        let obs = PilotObservation {
            y: p.clone(),
            p,
            sigma_n2: 0.0,
        };
        let est = ls_estimate(&obs).unwrap();
        assert!((est - CMat::identity(4, 4)).norm() < 1e-10);
    }

    #[test]
    fn ls_rejects_underdetermined_pilots() {
        let h = CMat::zeros(2, 4);
        let p = pilot_matrix(4, 3, 1.0);
        let obs = observe(&h, &p, 0.1, 1).unwrap();
        assert!(matches!(ls_estimate(&obs), Err(Error::Rank(_))));
    }

    #[test]
    fn ls_matches_normal_equations_oracle() {
        // H_LS^H solves min over X of ||P^H X - Y^H||, row by row; check the
        // pseudoinverse route against the independent SVD solver.
        let mut rng = rng_from_seed(13);
        let h = sample_cn_matrix(&mut rng, 2, 4, 1.0);
        let p = pilot_matrix(4, 6, 1.0);
        let obs = observe(&h, &p, 0.2, 9).unwrap();
        let est = ls_estimate(&obs).unwrap();
        let a = obs.p.adjoint(); // n_p x n_tx
        for r in 0..2 {
            let y_r = CVec::from_fn(6, |i, _| obs.y[(r, i)].conj());
            let x = solve_lstsq(&a, &y_r); // x = conj of row r of H_LS
            for t in 0..4 {
                assert!((est[(r, t)] - x[t].conj()).norm() < 1e-8, "row {r} col {t}");
            }
        }
    }

    #[test]
    fn dictionary_critical_sampling_is_unitary() {
        let d = build_dictionary(2, 4, 1).unwrap();
        let gram = d.d_tx.adjoint() * &d.d_tx;
        assert!((gram - CMat::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn dictionary_columns_are_unit_norm() {
        let d = build_dictionary(4, 8, 2).unwrap();
        for col in 0..d.d_tx.ncols() {
            let n2: f64 = d.d_tx.column(col).iter().map(|z| z.norm_sqr()).sum();
            assert!((n2 - 1.0).abs() < 1e-12);
        }
        for col in 0..d.d_rx.ncols() {
            let n2: f64 = d.d_rx.column(col).iter().map(|z| z.norm_sqr()).sum();
            assert!((n2 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dictionary_adjacent_coherence_formula() {
        // |<d_g, d_{g+1}>| = sin(pi/o) / (n sin(pi/(o n)))
        let n = 4;
        let o = 2;
        let d = build_dictionary(2, n, o).unwrap();
        assert_eq!(d.d_tx.ncols(), 8);
        let expect = (std::f64::consts::PI / o as f64).sin()
            / (n as f64 * (std::f64::consts::PI / (o * n) as f64).sin());
        for g in 0..d.d_tx.ncols() - 1 {
            let ip = frob_inner(
                &CMat::from_fn(n, 1, |r, _| d.d_tx[(r, g)]),
                &CMat::from_fn(n, 1, |r, _| d.d_tx[(r, g + 1)]),
            )
            .norm();
            assert!((ip - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn omp_recovers_single_atom_exactly() {
        let dict = build_dictionary(2, 4, 2).unwrap();
        let h = dict.atom_matrix(5).scale(2.0); // on-grid 1-sparse channel
        let p = pilot_matrix(4, 4, 1.0);
        let obs = observe(&h, &p, 0.0, 0).unwrap();
        let est = omp_estimate(&obs, &dict, 1).unwrap();
        assert!((&est - &h).norm() < 1e-9);
    }

    #[test]
    fn omp_rejects_zero_sparsity() {
        let dict = build_dictionary(2, 4, 2).unwrap();
        let h = CMat::zeros(2, 4);
        let p = pilot_matrix(4, 4, 1.0);
        let obs = observe(&h, &p, 0.1, 0).unwrap();
        assert!(omp_estimate(&obs, &dict, 0).is_err());
        assert!(omp_estimate(&obs, &dict, 1000).is_err());
    }

    #[test]
    fn omp_residuals_non_increasing() {
        let mut rng = rng_from_seed(23);
        let h = sample_cn_matrix(&mut rng, 2, 4, 1.0);
        let p = pilot_matrix(4, 4, 1.0);
        let obs = observe(&h, &p, 0.05, 3).unwrap();
        let dict = build_dictionary(2, 4, 2).unwrap();
        let path = omp_path(&obs, &dict, 6).unwrap();
        let mut prev = f64::INFINITY;
        for est in path {
            let r = (&obs.y - est * &obs.p).norm();
            assert!(r <= prev + 1e-10);
            prev = r;
        }
    }

    #[test]
    fn genie_picks_sparsity_one_for_exact_single_atom() {
        let dict = build_dictionary(2, 4, 2).unwrap();
        let h = dict.atom_matrix(3).scale(1.5);
        let p = pilot_matrix(4, 4, 1.0);
        let obs = observe(&h, &p, 0.0, 0).unwrap();
        let est = genie_omp_estimate(&obs, &dict, &h, 4).unwrap();
        assert!((est - h).norm() < 1e-9);
    }

    #[test]
    fn genie_error_non_increasing_in_budget() {
        let mut rng = rng_from_seed(29);
        let h = sample_cn_matrix(&mut rng, 2, 4, 1.0);
        let p = pilot_matrix(4, 4, 1.0);
        let obs = observe(&h, &p, 0.02, 7).unwrap();
        let dict = build_dictionary(2, 4, 2).unwrap();
        let mut prev = f64::INFINITY;
        for s_max in 1..=6 {
            let est = genie_omp_estimate(&obs, &dict, &h, s_max).unwrap();
            let err = (est - &h).norm();
            assert!(err <= prev + 1e-12);
            prev = err;
        }
    }

    #[test]
    fn genie_beats_every_fixed_order() {
        let mut rng = rng_from_seed(31);
        let h = sample_cn_matrix(&mut rng, 2, 4, 1.0);
        let p = pilot_matrix(4, 4, 1.0);
        let obs = observe(&h, &p, 0.05, 9).unwrap();
        let dict = build_dictionary(2, 4, 2).unwrap();
        let genie_err = (genie_omp_estimate(&obs, &dict, &h, 4).unwrap() - &h).norm();
        for s in 1..=4 {
            let err = (omp_estimate(&obs, &dict, s).unwrap() - &h).norm();
            assert!(genie_err <= err + 1e-12);
        }
    }

    #[test]
    fn select_index_trivial_and_waterfilling_cases() {
        let cfg = SystemConfig::with_defaults(4, 2, 4).unwrap();
        let mut rng = rng_from_seed(37);
        let h = sample_cn_matrix(&mut rng, 2, 4, 1.0);
        let rho = cfg.rho;
        let sigma = 0.5;

        let single = Codebook {
            entries: vec![uniform_power_cov(&cfg)],
            m_bits: Some(0),
            rho,
            rank_cap: 2,
        };
        assert_eq!(select_index(&h, &single, sigma).unwrap(), 0);

        // codebook containing the channel's own water-filling covariance
        let wf = waterfilling_cov(&h, rho, sigma).unwrap();
        let mut entries = vec![uniform_power_cov(&cfg)];
        for seed in 0..4 {
            let mut r2 = rng_from_seed(100 + seed);
            let g = sample_cn_matrix(&mut r2, 2, 4, 1.0);
            entries.push(waterfilling_cov(&g, rho, sigma).unwrap());
        }
        entries.push(wf);
        let k_expect = entries.len() - 1;
        let cb = Codebook {
            entries,
            m_bits: None,
            rho,
            rank_cap: 2,
        };
        assert_eq!(select_index(&h, &cb, sigma).unwrap(), k_expect);
    }
}
