//! Synthetic multipath channel generation, SNR filtering and dataset splits.
//!
//! Channels are sums of plane-wave paths between uniform linear arrays:
//! `H(f) = sum_l g_l * exp(-2*pi*j*f*tau_l) * a_rx(theta_l) a_tx(phi_l)^H`.
//! An uplink/downlink pair shares one propagation geometry (delays, angles,
//! gains); only the carrier frequency differs, which breaks instantaneous
//! reciprocity while keeping the statistics identical.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{ratio_to_db, Side, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::{c, CMat, CVec, C64};
use crate::rng::{derive_seed, rng_for_stream, rng_from_seed};

/// Line-of-sight class of a geometry; decides the path count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LosClass {
    Los,
    Nlos,
}

/// One multipath component.
#[derive(Debug, Clone)]
pub struct PathComponent {
    /// Propagation delay in seconds.
    pub delay_s: f64,
    /// Azimuth angle of departure (radians, 0 = array broadside).
    pub aod_rad: f64,
    /// Azimuth angle of arrival (radians).
    pub aoa_rad: f64,
    /// Complex path gain (linear amplitude).
    pub gain: C64,
}

/// Frequency-independent description of one propagation environment.
#[derive(Debug, Clone)]
pub struct PropagationGeometry {
    pub paths: Vec<PathComponent>,
    pub los_class: LosClass,
}

/// Path counts per line-of-sight class.
pub const LOS_PATH_COUNT: usize = 37;
pub const NLOS_PATH_COUNT: usize = 61;
/// Probability of drawing a LOS geometry.
const LOS_PROBABILITY: f64 = 0.5;
/// Delays are uniform on [0, MAX_DELAY_S).
const MAX_DELAY_S: f64 = 1.0e-6;
/// Per-path power decays as exp(-delay / DELAY_DECAY_S).
const DELAY_DECAY_S: f64 = 0.3e-6;
/// Departure/arrival angles are uniform over a 120 degree sector.
const SECTOR_HALF_RAD: f64 = std::f64::consts::FRAC_PI_3;
/// Log-normal total-gain statistics, chosen so that the SNR distribution is
/// centered inside the usual [-10, 20] dB selection window for any config.
const MEDIAN_SNR_DB: f64 = 5.0;
const SHADOW_STD_DB: f64 = 8.0;

impl PropagationGeometry {
    /// Draws a geometry for `config` from `rng`.
    ///
    /// The total path power is scaled so the resulting SNR is roughly
    /// log-normal with median [`MEDIAN_SNR_DB`] and spread [`SHADOW_STD_DB`].
    pub fn draw<R: Rng>(rng: &mut R, config: &SystemConfig) -> PropagationGeometry {
        let los = rng.random::<f64>() < LOS_PROBABILITY;
        let (los_class, count) = if los {
            (LosClass::Los, LOS_PATH_COUNT)
        } else {
            (LosClass::Nlos, NLOS_PATH_COUNT)
        };
        let delays: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * MAX_DELAY_S).collect();
        let aods: Vec<f64> = (0..count)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * SECTOR_HALF_RAD)
            .collect();
        let aoas: Vec<f64> = (0..count)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * SECTOR_HALF_RAD)
            .collect();

        let shadow: f64 = rng.sample(StandardNormal);
        let total_power = (config.sigma_n2 / config.rho)
            * 10f64.powf((MEDIAN_SNR_DB + SHADOW_STD_DB * shadow) / 10.0);

        // Exponential power profile over delay, normalized to total_power.
        let weights: Vec<f64> = delays.iter().map(|t| (-t / DELAY_DECAY_S).exp()).collect();
        let weight_sum: f64 = weights.iter().sum();

        let paths = (0..count)
            .map(|l| {
                let amp = (total_power * weights[l] / weight_sum).sqrt();
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                PathComponent {
                    delay_s: delays[l],
                    aod_rad: aods[l],
                    aoa_rad: aoas[l],
                    gain: c(re * amp / 2f64.sqrt(), im * amp / 2f64.sqrt()),
                }
            })
            .collect();

        PropagationGeometry { paths, los_class }
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.is_empty() {
            return Err(Error::Config("geometry needs at least one path".into()));
        }
        let total: f64 = self.paths.iter().map(|p| p.gain.norm_sqr()).sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::Config("total path power must be finite and positive".into()));
        }
        if self.paths.iter().any(|p| p.delay_s < 0.0) {
            return Err(Error::Config("path delays must be nonnegative".into()));
        }
        Ok(())
    }
}

/// ULA array response `a(theta)_m = exp(j*pi*m*sin(theta))`, m = 0..n-1
/// (half-wavelength element spacing).
pub fn steering_vector(n: usize, angle_rad: f64) -> CVec {
    let phase = std::f64::consts::PI * angle_rad.sin();
    CVec::from_fn(n, |m, _| {
        let arg = phase * m as f64;
        c(arg.cos(), arg.sin())
    })
}

/// Synthesizes the channel matrix of `geometry` at carrier `f_c`.
pub fn synthesize_channel(
    geometry: &PropagationGeometry,
    f_c: f64,
    n_rx: usize,
    n_tx: usize,
) -> CMat {
    let mut h = CMat::zeros(n_rx, n_tx);
    for path in &geometry.paths {
        let arg = -2.0 * std::f64::consts::PI * f_c * path.delay_s;
        let phase = c(arg.cos(), arg.sin());
        let a_rx = steering_vector(n_rx, path.aoa_rad);
        let a_tx = steering_vector(n_tx, path.aod_rad);
        let weight = path.gain * phase;
        // rank-one update: weight * a_rx * a_tx^H
        for t in 0..n_tx {
            let col = weight * a_tx[t].conj();
            for r in 0..n_rx {
                h[(r, t)] += a_rx[r] * col;
            }
        }
    }
    h
}

/// A paired UL/DL channel realization; both matrices are `n_rx x n_tx`.
#[derive(Debug, Clone)]
pub struct ChannelSample {
    pub h_ul: CMat,
    pub h_dl: CMat,
    /// Opaque identifier linking the pair to its generation draw.
    pub geometry_id: u64,
}

impl ChannelSample {
    pub fn channel(&self, side: Side) -> &CMat {
        match side {
            Side::Ul => &self.h_ul,
            Side::Dl => &self.h_dl,
        }
    }
}

/// An ordered collection of paired channel samples under one configuration.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<ChannelSample>,
    pub config: SystemConfig,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Channel matrices of one side, in sample order.
    pub fn channels(&self, side: Side) -> Vec<&CMat> {
        self.samples.iter().map(|s| s.channel(side)).collect()
    }
}

/// Generates `count` paired UL/DL samples; deterministic for a fixed seed.
///
/// Sample `i` draws its geometry from an RNG stream derived from
/// `(seed, i)`, so generation order (or chunking) cannot change the result.
pub fn generate_paired_dataset(config: &SystemConfig, count: usize, seed: u64) -> Result<Dataset> {
    config.validate()?;
    if count == 0 {
        return Err(Error::Size("count must be at least 1".into()));
    }
    let samples = (0..count)
        .map(|i| {
            let mut rng = rng_for_stream(seed, i as u64);
            let geometry = PropagationGeometry::draw(&mut rng, config);
            ChannelSample {
                h_ul: synthesize_channel(&geometry, config.f_ul, config.n_rx, config.n_tx),
                h_dl: synthesize_channel(&geometry, config.f_dl, config.n_rx, config.n_tx),
                geometry_id: derive_seed(seed, i as u64),
            }
        })
        .collect();
    Ok(Dataset {
        samples,
        config: config.clone(),
    })
}

/// SNR in dB under uniform power allocation:
/// `rho/n_tx * ||H||_F^2 / (sigma_n2 * n_rx)`.
pub fn snr_db(h: &CMat, config: &SystemConfig) -> f64 {
    let frob2: f64 = h.iter().map(|z| z.norm_sqr()).sum();
    let ratio =
        config.rho / config.n_tx as f64 * frob2 / (config.sigma_n2 * config.n_rx as f64);
    ratio_to_db(ratio)
}

/// Keeps the samples whose `side` channel has SNR in the closed interval
/// `[lo_db, hi_db]`; pairs are kept or dropped together.
pub fn filter_by_snr(ds: &Dataset, lo_db: f64, hi_db: f64, side: Side) -> Result<Dataset> {
    if lo_db > hi_db {
        return Err(Error::Domain(format!(
            "invalid SNR range [{lo_db}, {hi_db}]"
        )));
    }
    let samples = ds
        .samples
        .iter()
        .filter(|s| {
            let snr = snr_db(s.channel(side), &ds.config);
            lo_db <= snr && snr <= hi_db
        })
        .cloned()
        .collect();
    Ok(Dataset {
        samples,
        config: ds.config.clone(),
    })
}

/// Splits into (train, val, test) with a deterministic seeded shuffle; the
/// remainder after `train + val` becomes the test set.
pub fn split_dataset(
    ds: &Dataset,
    train: usize,
    val: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let total = ds.len();
    if train + val > total {
        return Err(Error::Size(format!(
            "split ({train} train + {val} val) exceeds dataset size {total}"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng_from_seed(seed));

    let take = |range: std::ops::Range<usize>| Dataset {
        samples: order[range].iter().map(|&i| ds.samples[i].clone()).collect(),
        config: ds.config.clone(),
    };
    Ok((
        take(0..train),
        take(train..train + val),
        take(train + val..total),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_config() -> SystemConfig {
        SystemConfig::with_defaults(8, 2, 8).unwrap()
    }

    #[test]
    fn broadside_single_path_is_all_ones() {
        let geometry = PropagationGeometry {
            paths: vec![PathComponent {
                delay_s: 0.0,
                aod_rad: 0.0,
                aoa_rad: 0.0,
                gain: c(1.0, 0.0),
            }],
            los_class: LosClass::Los,
        };
        let h = synthesize_channel(&geometry, 2.0e9, 1, 2);
        assert_eq!(h.shape(), (1, 2));
        for z in h.iter() {
            assert!((z - c(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn half_cycle_delay_flips_phase_between_carriers() {
        let cfg = test_config();
        let tau = 1.0 / (2.0 * (cfg.f_dl - cfg.f_ul));
        let geometry = PropagationGeometry {
            paths: vec![PathComponent {
                delay_s: tau,
                aod_rad: 0.3,
                aoa_rad: -0.2,
                gain: c(0.7, -0.1),
            }],
            los_class: LosClass::Nlos,
        };
        let h_ul = synthesize_channel(&geometry, cfg.f_ul, cfg.n_rx, cfg.n_tx);
        let h_dl = synthesize_channel(&geometry, cfg.f_dl, cfg.n_rx, cfg.n_tx);
        // exp(-2*pi*j*(f_dl - f_ul)*tau) = exp(-j*pi) = -1 entrywise
        for (u, d) in h_ul.iter().zip(h_dl.iter()) {
            assert!((u + d).norm() < 1e-9 * u.norm().max(1.0));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = test_config();
        let a = generate_paired_dataset(&cfg, 100, 7).unwrap();
        let b = generate_paired_dataset(&cfg, 100, 7).unwrap();
        assert_eq!(a.len(), 100);
        for (x, y) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(x.h_ul, y.h_ul);
            assert_eq!(x.h_dl, y.h_dl);
            assert_eq!(x.geometry_id, y.geometry_id);
        }
    }

    #[test]
    fn paired_consistency_at_equal_carriers() {
        let cfg = test_config();
        let ds = generate_paired_dataset(&cfg, 5, 11).unwrap();
        // Re-synthesize both sides at the same frequency: they must coincide.
        for (i, _) in ds.samples.iter().enumerate() {
            let mut rng = rng_for_stream(11, i as u64);
            let geometry = PropagationGeometry::draw(&mut rng, &cfg);
            let at_ul = synthesize_channel(&geometry, cfg.f_ul, cfg.n_rx, cfg.n_tx);
            let again = synthesize_channel(&geometry, cfg.f_ul, cfg.n_rx, cfg.n_tx);
            assert_eq!(at_ul, again);
        }
    }

    #[test]
    fn single_path_channel_has_rank_one() {
        let geometry = PropagationGeometry {
            paths: vec![PathComponent {
                delay_s: 0.4e-6,
                aod_rad: 0.5,
                aoa_rad: -0.4,
                gain: c(0.3, 0.8),
            }],
            los_class: LosClass::Los,
        };
        let h = synthesize_channel(&geometry, 2.6e9, 3, 6);
        let svd = h.svd(false, false);
        let s = svd.singular_values;
        assert!(s[0] > 1e-6);
        for i in 1..s.len() {
            assert!(s[i] < 1e-10 * s[0]);
        }
    }

    #[test]
    fn snr_zero_db_case() {
        let cfg = test_config();
        // ||H||_F^2 = n_tx * n_rx * sigma_n2 / rho gives ratio 1.
        let frob2 = cfg.n_tx as f64 * cfg.n_rx as f64 * cfg.sigma_n2 / cfg.rho;
        let entry = (frob2 / (cfg.n_tx * cfg.n_rx) as f64).sqrt();
        let h = CMat::from_element(cfg.n_rx, cfg.n_tx, c(entry, 0.0));
        assert!(snr_db(&h, &cfg).abs() < 1e-10);
    }

    #[test]
    fn snr_paper_power_levels() {
        // rho = 15 dBm, sigma_n2 = -114 dBm; scale ||H||_F^2 for ratio 100.
        let cfg = test_config();
        let frob2 = 100.0 * cfg.n_tx as f64 * cfg.sigma_n2 * cfg.n_rx as f64 / cfg.rho;
        let entry = (frob2 / (cfg.n_tx * cfg.n_rx) as f64).sqrt();
        let h = CMat::from_element(cfg.n_rx, cfg.n_tx, c(0.0, entry));
        assert!((snr_db(&h, &cfg) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn snr_matches_elementwise_oracle() {
        let cfg = SystemConfig::with_defaults(4, 2, 4).unwrap();
        let mut rng = rng_from_seed(3);
        let h = crate::linalg::sample_cn_matrix(&mut rng, 2, 4, 1.0);
        // independent elementwise accumulation
        let mut frob2 = 0.0;
        for r in 0..2 {
            for t in 0..4 {
                frob2 += h[(r, t)].re * h[(r, t)].re + h[(r, t)].im * h[(r, t)].im;
            }
        }
        let expect = 10.0 * (cfg.rho * frob2 / (cfg.n_tx as f64 * cfg.sigma_n2 * cfg.n_rx as f64)).log10();
        assert!((snr_db(&h, &cfg) - expect).abs() < 1e-12);
    }

    #[test]
    fn filter_drops_zero_channels() {
        let cfg = test_config();
        let zero = ChannelSample {
            h_ul: CMat::zeros(2, 8),
            h_dl: CMat::zeros(2, 8),
            geometry_id: 0,
        };
        let ds = Dataset {
            samples: vec![zero],
            config: cfg,
        };
        let kept = filter_by_snr(&ds, -10.0, 20.0, Side::Dl).unwrap();
        assert!(kept.is_empty());
    }

    #[test]
    fn filter_matches_recount_and_is_subset() {
        let cfg = test_config();
        let ds = generate_paired_dataset(&cfg, 400, 19).unwrap();
        let kept = filter_by_snr(&ds, -10.0, 20.0, Side::Dl).unwrap();
        let recount = ds
            .samples
            .iter()
            .filter(|s| {
                let v = snr_db(&s.h_dl, &cfg);
                (-10.0..=20.0).contains(&v)
            })
            .count();
        assert_eq!(kept.len(), recount);
        assert!(kept.len() < ds.len()); // shadowing spread guarantees rejects
        assert!(kept.len() > 0);
        for s in &kept.samples {
            let v = snr_db(&s.h_dl, &cfg);
            assert!((-10.0..=20.0).contains(&v));
        }
    }

    #[test]
    fn filter_boundaries_are_closed() {
        let cfg = test_config();
        let ds = generate_paired_dataset(&cfg, 3, 5).unwrap();
        let snr = snr_db(&ds.samples[1].h_dl, &cfg);
        let kept = filter_by_snr(&ds, snr, snr, Side::Dl).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.samples[0].geometry_id, ds.samples[1].geometry_id);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let cfg = test_config();
        let ds = generate_paired_dataset(&cfg, 1000, 23).unwrap();
        let (tr, va, te) = split_dataset(&ds, 600, 150, 42).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (600, 150, 250));

        let (tr2, va2, te2) = split_dataset(&ds, 600, 150, 42).unwrap();
        let ids = |d: &Dataset| d.samples.iter().map(|s| s.geometry_id).collect::<Vec<_>>();
        assert_eq!(ids(&tr), ids(&tr2));
        assert_eq!(ids(&va), ids(&va2));
        assert_eq!(ids(&te), ids(&te2));
    }

    #[test]
    fn split_exhaustive_leaves_empty_test() {
        let cfg = test_config();
        let ds = generate_paired_dataset(&cfg, 10, 2).unwrap();
        let (tr, va, te) = split_dataset(&ds, 10, 0, 0).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (10, 0, 0));
        assert!(split_dataset(&ds, 11, 0, 0).is_err());
    }
}
