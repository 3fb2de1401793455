//! NMSE and link-level BER with MRT precoding and Gray-mapped QPSK.

use std::fmt;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::CMatrix;
use crate::error::{dim_err, Error, Result};

/// Mean over samples of `‖H − Ĥ‖²_F / ‖H‖²_F`.
pub fn nmse(truth: &[CMatrix], recovered: &[CMatrix]) -> Result<f64> {
    if truth.len() != recovered.len() {
        return dim_err(format!("{} true samples against {} recovered", truth.len(), recovered.len()));
    }
    if truth.is_empty() {
        return Err(Error::Usage("nmse of an empty set".into()));
    }
    let mut total = 0.0;
    for (k, (h, hh)) in truth.iter().zip(recovered).enumerate() {
        let norm = h.frobenius_sq();
        if norm == 0.0 {
            return Err(Error::Domain(format!("sample {k} has zero norm")));
        }
        total += h.sub(hh)?.frobenius_sq() / norm;
    }
    Ok(total / truth.len() as f64)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Unit-norm MRT precoder for the channel row `ĥ_nᴴ`, i.e. `v = ĥ_n/‖ĥ_n‖`.
///
/// `row` holds the conjugated entries of `ĥ_n` as stored in `H`. A zero row
/// falls back to the first basis vector.
pub fn mrt_beamformer(row: &[C64]) -> Vec<C64> {
    let norm = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        log::warn!("zero recovered channel row, precoding on antenna 0");
        let mut v = vec![C64::new(0.0, 0.0); row.len()];
        if let Some(first) = v.first_mut() {
            *first = C64::new(1.0, 0.0);
        }
        return v;
    }
    row.iter().map(|z| z.conj() / norm).collect()
}

/// Effective scalar channel `h_nᴴ v`.
pub fn effective_gain(row: &[C64], v: &[C64]) -> C64 {
    row.iter().zip(v).map(|(h, v)| h * v).sum()
}

pub fn qpsk_mod(b0: bool, b1: bool) -> C64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    C64::new(if b0 { -s } else { s }, if b1 { -s } else { s })
}

pub fn qpsk_demod(y: C64) -> (bool, bool) {
    (y.re < 0.0, y.im < 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub snr_db_list: Vec<f64>,
    pub symbols_per_subcarrier: usize,
    pub noise_seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { snr_db_list: vec![0.0, 5.0, 10.0, 15.0, 20.0], symbols_per_subcarrier: 4, noise_seed: 0 }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.symbols_per_subcarrier == 0 {
            return Err(Error::Config("symbols_per_subcarrier must be at least 1".into()));
        }
        if self.snr_db_list.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("non-finite SNR".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerPoint {
    pub snr_db: f64,
    pub ber: f64,
    pub num_bits: u64,
    pub errors: u64,
    /// Standard error of `ber` from the spread of per-sample error rates.
    pub stderr: f64,
}

fn cell_rng(seed: u64, snr_idx: usize, sample: usize, subcarrier: usize, n_samples: usize, nc: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = ((snr_idx * n_samples + sample) * nc + subcarrier) as u64;
    rng.set_stream(cell);
    rng
}

/// Monte-Carlo BER of `y = h_nᴴv_n x + n` with `v_n` from the recovered set.
///
/// The SNR is the average receive SNR per symbol: noise variance is
/// `N_t / snr` for unit-energy symbols, matching `E‖h_n‖² = N_t`. The
/// receiver equalizes by the true effective gain. Bits and noise for each
/// (SNR, sample, subcarrier) cell come from their own seeded stream.
pub fn ber_simulation(truth: &[CMatrix], recovered: &[CMatrix], link: &LinkConfig) -> Result<Vec<BerPoint>> {
    link.validate()?;
    if truth.len() != recovered.len() {
        return dim_err(format!("{} true samples against {} recovered", truth.len(), recovered.len()));
    }
    let Some(first) = truth.first() else {
        return Err(Error::Usage("BER of an empty set".into()));
    };
    let (nc, nt) = (first.rows(), first.cols());
    for (h, hh) in truth.iter().zip(recovered) {
        if (h.rows(), h.cols()) != (nc, nt) || (hh.rows(), hh.cols()) != (nc, nt) {
            return dim_err(format!("misaligned channel {}×{} / {}×{}", h.rows(), h.cols(), hh.rows(), hh.cols()));
        }
    }

    // precoders and gains do not depend on SNR
    let gains: Vec<Vec<C64>> = truth
        .iter()
        .zip(recovered)
        .map(|(h, hh)| (0..nc).map(|n| effective_gain(h.row(n), &mrt_beamformer(hh.row(n)))).collect())
        .collect();

    let bits_per_sample = (nc * link.symbols_per_subcarrier * 2) as u64;
    let mut out = Vec::with_capacity(link.snr_db_list.len());
    for (si, &snr_db) in link.snr_db_list.iter().enumerate() {
        let sigma = (nt as f64 / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
        let mut per_sample = Vec::with_capacity(truth.len());
        for (k, g) in gains.iter().enumerate() {
            let mut errors = 0u64;
            for (n, &gain) in g.iter().enumerate() {
                let mut rng = cell_rng(link.noise_seed, si, k, n, truth.len(), nc);
                for _ in 0..link.symbols_per_subcarrier {
                    let (b0, b1): (bool, bool) = (rng.gen(), rng.gen());
                    let nre: f64 = rng.sample(StandardNormal);
                    let nim: f64 = rng.sample(StandardNormal);
                    let y = gain * qpsk_mod(b0, b1) + C64::new(sigma * nre, sigma * nim);
                    let (d0, d1) = if gain.norm_sqr() > 0.0 { qpsk_demod(y / gain) } else { qpsk_demod(y) };
                    errors += u64::from(d0 != b0) + u64::from(d1 != b1);
                }
            }
            per_sample.push(errors);
        }
        let errors: u64 = per_sample.iter().sum();
        let num_bits = bits_per_sample * truth.len() as u64;
        let ber = errors as f64 / num_bits as f64;
        let stderr = if per_sample.len() > 1 {
            let s = per_sample.len() as f64;
            let var = per_sample
                .iter()
                .map(|&e| (e as f64 / bits_per_sample as f64 - ber).powi(2))
                .sum::<f64>()
                / (s - 1.0);
            (var / s).sqrt()
        } else {
            (ber * (1.0 - ber) / num_bits as f64).sqrt()
        };
        out.push(BerPoint { snr_db, ber, num_bits, errors, stderr });
    }
    Ok(out)
}

/// Closed-form coherent QPSK/BPSK bit error rate over Rayleigh fading at
/// average SNR per bit `gamma` (linear).
pub fn rayleigh_ber(gamma: f64) -> f64 {
    0.5 * (1.0 - (gamma / (1.0 + gamma)).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub nmse: f64,
    pub bits_per_sample: usize,
    pub samples: usize,
    pub ber: Vec<BerPoint>,
    pub ber_reference: Vec<BerPoint>,
}

impl MetricsReport {
    pub fn nmse_db(&self) -> f64 {
        to_db(self.nmse)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples={}", self.samples)?;
        writeln!(f, "{} bits/sample", self.bits_per_sample)?;
        writeln!(f, "nmse={:.6e}", self.nmse)?;
        writeln!(f, "nmse_db={:.4}", self.nmse_db())?;
        if !self.ber.is_empty() {
            writeln!(f, "# recovered CSI")?;
            writeln!(f, "snr_db,ber,num_bits")?;
            for p in &self.ber {
                writeln!(f, "{},{:.6e},{}", p.snr_db, p.ber, p.num_bits)?;
            }
        }
        if !self.ber_reference.is_empty() {
            writeln!(f, "# perfect CSI")?;
            writeln!(f, "snr_db,ber,num_bits")?;
            for p in &self.ber_reference {
                writeln!(f, "{},{:.6e},{}", p.snr_db, p.ber, p.num_bits)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_dataset, GenConfig};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn m(rows: usize, cols: usize, v: &[(f64, f64)]) -> CMatrix {
        CMatrix::from_vec(rows, cols, v.iter().map(|&(a, b)| c(a, b)).collect()).unwrap()
    }

    #[test]
    fn nmse_examples() {
        let h = m(2, 2, &[(1.0, 0.5), (0.0, -2.0), (0.3, 0.0), (1.0, 1.0)]);
        let set = vec![h.clone(), h.scaled(3.0)];
        assert_eq!(nmse(&set, &set).unwrap(), 0.0);
        let zeros = vec![CMatrix::zeros(2, 2); 2];
        assert!((nmse(&set, &zeros).unwrap() - 1.0).abs() < 1e-15);
        let doubled: Vec<_> = set.iter().map(|x| x.scaled(2.0)).collect();
        assert!((nmse(&set, &doubled).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&zeros, &set).is_err());
        assert!(nmse(&set[..1], &set).is_err());
    }

    #[test]
    fn nmse_unitary_invariance() {
        let cfg = GenConfig { seed: 4, ..GenConfig::new(8, 4, 8) };
        let truth = generate_dataset(&cfg, 3).unwrap();
        let rec: Vec<_> = truth.iter().map(|h| h.scaled(0.9)).collect();
        let fa = crate::channel::fourier_matrix(8);
        let fb = crate::channel::fourier_matrix(4);
        let tr = |x: &CMatrix| fa.matmul(x).unwrap().matmul(&fb.adjoint()).unwrap();
        let a = nmse(&truth, &rec).unwrap();
        let b = nmse(&truth.iter().map(tr).collect::<Vec<_>>(), &rec.iter().map(tr).collect::<Vec<_>>()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mrt_examples() {
        // h = [1, j] stored as the row hᴴ = [1, −j]
        let row = [c(1.0, 0.0), c(0.0, -1.0)];
        let v = mrt_beamformer(&row);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0] - c(s, 0.0)).norm() < 1e-15 && (v[1] - c(0.0, s)).norm() < 1e-15);
        assert!((effective_gain(&row, &v).norm() - 2f64.sqrt()).abs() < 1e-15);
        let v3 = mrt_beamformer(&[row[0] * 3.0, row[1] * 3.0]);
        assert!(v.iter().zip(&v3).all(|(a, b)| (a - b).norm() < 1e-15));
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-15);
        assert_eq!(mrt_beamformer(&[c(0.0, 0.0); 3])[0], c(1.0, 0.0));
    }

    #[test]
    fn qpsk_examples() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(qpsk_mod(false, false), c(s, s));
        for b0 in [false, true] {
            for b1 in [false, true] {
                let x = qpsk_mod(b0, b1);
                assert!((x.norm_sqr() - 1.0).abs() < 1e-15);
                assert_eq!(qpsk_demod(x), (b0, b1));
                assert_eq!(qpsk_demod(-x), (!b0, !b1));
            }
        }
    }

    #[test]
    fn ber_perfect_matches_reference_and_is_deterministic() {
        let cfg = GenConfig { seed: 9, ..GenConfig::new(16, 4, 8) };
        let truth = generate_dataset(&cfg, 4).unwrap();
        let link = LinkConfig { snr_db_list: vec![0.0, 5.0, 10.0], symbols_per_subcarrier: 8, noise_seed: 2 };
        let a = ber_simulation(&truth, &truth, &link).unwrap();
        let b = ber_simulation(&truth, &truth.clone(), &link).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|p| (0.0..=1.0).contains(&p.ber) && p.num_bits == 4 * 16 * 8 * 2));
        // a recovered channel scaled by a positive constant gives identical counts
        let scaled: Vec<_> = truth.iter().map(|h| h.scaled(2.5)).collect();
        let s = ber_simulation(&truth, &scaled, &link).unwrap();
        assert_eq!(a.iter().map(|p| p.errors).collect::<Vec<_>>(), s.iter().map(|p| p.errors).collect::<Vec<_>>());
    }

    #[test]
    fn ber_rejects_misaligned_sets() {
        let cfg = GenConfig::new(8, 2, 4);
        let truth = generate_dataset(&cfg, 2).unwrap();
        assert!(ber_simulation(&truth, &truth[..1], &LinkConfig::default()).is_err());
        let other = generate_dataset(&GenConfig::new(8, 4, 4), 2).unwrap();
        assert!(ber_simulation(&truth, &other, &LinkConfig::default()).is_err());
        let bad = LinkConfig { symbols_per_subcarrier: 0, ..LinkConfig::default() };
        assert!(ber_simulation(&truth, &truth, &bad).is_err());
    }

    #[test]
    fn rayleigh_formula_spot_value() {
        assert!((rayleigh_ber(10.0) - 0.0233).abs() < 1e-4);
    }
}
