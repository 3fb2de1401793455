//! Synthetic clustered-multipath MIMO-OFDM channels and the angular-delay
//! preprocessing chain that turns them into autoencoder inputs.
//!
//! A channel is an `N_c×N_t` complex matrix whose row `n` is `h_nᴴ`, the
//! conjugated channel vector of subcarrier `n`. The forward chain is
//! `F_a·H·F_bᴴ` (2-D unitary DFT), a circular row shift, cropping to the
//! first `Ñ_c` delay rows, and an affine map of real/imaginary parts into
//! `(0, 1)`; [`Preprocessor::invert`] undoes each step.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

pub type C64 = Complex64;

/// Lower clamp bound of normalized entries; the upper one is `1 − NORM_EPS`.
pub const NORM_EPS: f64 = 1e-6;

/// Relative margin added on each side of the fitted normalization range.
pub const NORM_MARGIN: f64 = 0.01;

/// Maximum per-path delay offset, in delay bins, around its cluster centre.
pub const DELAY_JITTER: i64 = 1;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!("{rows}×{cols} matrix from {} entries", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return dim_err(format!("{}×{} times {}×{}", self.rows, self.cols, other.rows, other.cols));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.data[k * other.cols + c];
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return dim_err("matrix difference of unequal shapes");
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Unitary DFT matrix, `F[p,q] = exp(−j2πpq/n)/√n`.
pub fn fourier_matrix(n: usize) -> CMatrix {
    let norm = 1.0 / (n as f64).sqrt();
    let mut f = CMatrix::zeros(n, n);
    for p in 0..n {
        for q in 0..n {
            // reduce pq mod n first so the angle stays small and exact
            let k = (p * q) % n;
            f[(p, q)] = C64::from_polar(norm, -2.0 * PI * k as f64 / n as f64);
        }
    }
    f
}

/// Parameters of the clustered-multipath generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub nc: usize,
    pub nt: usize,
    pub nc_crop: usize,
    pub clusters: usize,
    pub paths_per_cluster: usize,
    /// Delays are integer bins in `[0, ⌊max_delay_fraction·nc⌋)`.
    pub max_delay_fraction: f64,
    /// Half-width, in radians, of each cluster's angular spread.
    pub angle_spread: f64,
    pub seed: u64,
}

impl GenConfig {
    /// Defaults for the given extents; the delay window fills the crop exactly.
    pub fn new(nc: usize, nt: usize, nc_crop: usize) -> Self {
        Self {
            nc,
            nt,
            nc_crop,
            clusters: 3,
            paths_per_cluster: 4,
            max_delay_fraction: nc_crop as f64 / nc as f64,
            angle_spread: 0.1,
            seed: 0,
        }
    }

    pub fn delay_bins(&self) -> usize {
        (self.max_delay_fraction * self.nc as f64 + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.nc == 0 || self.nt == 0 || self.nc_crop == 0 {
            return Err(Error::Config("extents must be positive".into()));
        }
        if self.nc_crop > self.nc {
            return Err(Error::Config(format!("nc_crop {} exceeds nc {}", self.nc_crop, self.nc)));
        }
        if self.clusters == 0 || self.paths_per_cluster == 0 {
            return Err(Error::Config("generator needs at least one path".into()));
        }
        if !(self.max_delay_fraction > 0.0 && self.max_delay_fraction <= 1.0) {
            return Err(Error::Config("max_delay_fraction must lie in (0, 1]".into()));
        }
        if self.max_delay_fraction * self.nc as f64 > self.nc_crop as f64 + 1e-9 {
            return Err(Error::Config(format!(
                "max_delay_fraction·nc = {} exceeds nc_crop {}",
                self.max_delay_fraction * self.nc as f64,
                self.nc_crop
            )));
        }
        if self.delay_bins() == 0 {
            return Err(Error::Config("delay window holds no bin".into()));
        }
        if !(self.angle_spread >= 0.0 && self.angle_spread.is_finite()) {
            return Err(Error::Config("angle_spread must be non-negative".into()));
        }
        Ok(())
    }
}

/// One propagation path: integer delay bin, departure angle, complex gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub delay: usize,
    pub angle: f64,
    pub gain: C64,
}

/// Builds `H` from explicit paths: row `f` holds the conjugate of
/// `Σ_p α_p·e^{−j2πfτ_p/N_c}·a(θ_p)` with ULA steering `a_t(θ) = e^{jπt·sinθ}`.
pub fn channel_from_paths(nc: usize, nt: usize, paths: &[Path]) -> CMatrix {
    let mut h = CMatrix::zeros(nc, nt);
    let mut delay = vec![C64::new(0.0, 0.0); nc];
    let mut steer = vec![C64::new(0.0, 0.0); nt];
    for p in paths {
        for (f, d) in delay.iter_mut().enumerate() {
            let k = (f * p.delay) % nc;
            *d = C64::from_polar(1.0, -2.0 * PI * k as f64 / nc as f64);
        }
        let s = p.angle.sin();
        for (t, a) in steer.iter_mut().enumerate() {
            *a = C64::from_polar(1.0, PI * t as f64 * s);
        }
        for f in 0..nc {
            let df = p.gain * delay[f];
            for t in 0..nt {
                h.data[f * nt + t] += (df * steer[t]).conj();
            }
        }
    }
    h
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws the paths of sample `index`; depends only on `(cfg.seed, index)`.
pub fn draw_paths(cfg: &GenConfig, index: u64) -> Vec<Path> {
    let mut rng = sample_rng(cfg.seed, index);
    let bins = cfg.delay_bins() as i64;
    let total = (cfg.clusters * cfg.paths_per_cluster) as f64;
    // E|α|² = 1/P so every entry of H has unit mean power
    let gain_std = (0.5 / total).sqrt();
    let mut paths = Vec::with_capacity(total as usize);
    for _ in 0..cfg.clusters {
        let centre_delay = rng.gen_range(0..bins);
        let centre_angle = rng.gen_range(-PI / 2.0..PI / 2.0);
        for _ in 0..cfg.paths_per_cluster {
            let jitter = rng.gen_range(-DELAY_JITTER..=DELAY_JITTER);
            let delay = (centre_delay + jitter).clamp(0, bins - 1) as usize;
            let angle = if cfg.angle_spread > 0.0 {
                centre_angle + rng.gen_range(-cfg.angle_spread..=cfg.angle_spread)
            } else {
                centre_angle
            };
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            paths.push(Path { delay, angle, gain: C64::new(re, im) * gain_std });
        }
    }
    paths
}

pub fn generate_sample(cfg: &GenConfig, index: u64) -> CMatrix {
    channel_from_paths(cfg.nc, cfg.nt, &draw_paths(cfg, index))
}

pub fn generate_dataset(cfg: &GenConfig, count: usize) -> Result<Vec<CMatrix>> {
    cfg.validate()?;
    Ok((0..count as u64).map(|i| generate_sample(cfg, i)).collect())
}

/// FFT-backed `H ↦ F_a·H·F_bᴴ` and its inverse for fixed extents.
pub struct AngularDelay {
    nc: usize,
    nt: usize,
    delay_fwd: Arc<dyn Fft<f64>>,
    delay_inv: Arc<dyn Fft<f64>>,
    angle_fwd: Arc<dyn Fft<f64>>,
    angle_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for AngularDelay {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AngularDelay").field("nc", &self.nc).field("nt", &self.nt).finish()
    }
}

impl AngularDelay {
    pub fn new(nc: usize, nt: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nc,
            nt,
            delay_fwd: planner.plan_fft_forward(nc),
            delay_inv: planner.plan_fft_inverse(nc),
            angle_fwd: planner.plan_fft_forward(nt),
            angle_inv: planner.plan_fft_inverse(nt),
        }
    }

    fn check(&self, h: &CMatrix) -> Result<()> {
        if (h.rows, h.cols) != (self.nc, self.nt) {
            return dim_err(format!("{}×{} channel for a {}×{} transform", h.rows, h.cols, self.nc, self.nt));
        }
        Ok(())
    }

    fn apply(&self, h: &CMatrix, columns: &dyn Fft<f64>, rows: &dyn Fft<f64>) -> CMatrix {
        let (nc, nt) = (self.nc, self.nt);
        let scale = 1.0 / ((nc * nt) as f64).sqrt();
        let mut out = h.clone();
        let mut column = vec![C64::new(0.0, 0.0); nc];
        for t in 0..nt {
            for f in 0..nc {
                column[f] = out.data[f * nt + t];
            }
            columns.process(&mut column);
            for f in 0..nc {
                out.data[f * nt + t] = column[f];
            }
        }
        for row in out.data.chunks_exact_mut(nt) {
            rows.process(row);
        }
        out.data.iter_mut().for_each(|z| *z *= scale);
        out
    }

    /// `F_a·H·F_bᴴ`.
    pub fn forward(&self, h: &CMatrix) -> Result<CMatrix> {
        self.check(h)?;
        Ok(self.apply(h, self.delay_fwd.as_ref(), self.angle_inv.as_ref()))
    }

    /// `F_aᴴ·H⁽ᵃ⁾·F_b`.
    pub fn inverse(&self, ha: &CMatrix) -> Result<CMatrix> {
        self.check(ha)?;
        Ok(self.apply(ha, self.delay_inv.as_ref(), self.angle_fwd.as_ref()))
    }
}

pub fn to_angular_delay(h: &CMatrix) -> Result<CMatrix> {
    AngularDelay::new(h.rows, h.cols).forward(h)
}

/// Fraction of `‖H⁽ᵃ⁾‖²` held by the first `rows` delay rows.
pub fn energy_fraction(ha: &CMatrix, rows: usize) -> f64 {
    let kept: f64 = ha.data[..rows.min(ha.rows) * ha.cols].iter().map(|z| z.norm_sqr()).sum();
    kept / ha.frobenius_sq()
}

/// Affine normalization constants and the optional delay-row shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocState {
    pub a: f64,
    pub b: f64,
    pub shift: usize,
}

impl PreprocState {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > self.a) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::Config(format!("normalization needs b > a, got a={} b={}", self.a, self.b)));
        }
        Ok(())
    }

    /// Global min/max of every real and imaginary part, widened by
    /// [`NORM_MARGIN`] of the range on each side.
    pub fn fit<'a>(cropped: impl IntoIterator<Item = &'a CMatrix>, shift: usize) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for m in cropped {
            for z in &m.data {
                lo = lo.min(z.re).min(z.im);
                hi = hi.max(z.re).max(z.im);
            }
        }
        if !(hi > lo) {
            return Err(Error::Config("cannot fit normalization to a constant or empty set".into()));
        }
        let margin = NORM_MARGIN * (hi - lo);
        let state = Self { a: lo - margin, b: hi + margin, shift };
        state.validate()?;
        Ok(state)
    }
}

/// Rolls rows down by `shift` (row `r` moves to `r + shift mod N_c`) and keeps
/// the first `nc_crop` rows.
pub fn crop_shift(ha: &CMatrix, shift: usize, nc_crop: usize) -> Result<CMatrix> {
    let nc = ha.rows;
    if nc_crop > nc || nc_crop == 0 {
        return Err(Error::Config(format!("cannot keep {nc_crop} of {nc} delay rows")));
    }
    if shift >= nc {
        return Err(Error::Config(format!("shift {shift} not below {nc}")));
    }
    let mut out = CMatrix::zeros(nc_crop, ha.cols);
    for r in 0..nc_crop {
        let src = (r + nc - shift) % nc;
        out.data[r * ha.cols..(r + 1) * ha.cols].copy_from_slice(ha.row(src));
    }
    Ok(out)
}

/// Splits real/imaginary parts into a `Ñ_c×N_t×2` tensor mapped through
/// `(v − a)/(b − a)` and clamped to `[NORM_EPS, 1 − NORM_EPS]`.
pub fn split_normalize(hcc: &CMatrix, state: &PreprocState) -> Result<Tensor> {
    state.validate()?;
    let span = state.b - state.a;
    let squash = |v: f64| ((v - state.a) / span).clamp(NORM_EPS, 1.0 - NORM_EPS);
    let mut data = Vec::with_capacity(hcc.data.len() * 2);
    for z in &hcc.data {
        data.push(squash(z.re));
        data.push(squash(z.im));
    }
    Tensor::new(&[hcc.rows, hcc.cols, 2], data)
}

/// Inverse affine map back to a complex `Ñ_c×N_t` matrix.
pub fn denormalize(hcp: &Tensor, state: &PreprocState) -> Result<CMatrix> {
    state.validate()?;
    let s = hcp.shape();
    if s.len() != 3 || s[2] != 2 {
        return dim_err(format!("expected Ñ_c×N_t×2 tensor, got {s:?}"));
    }
    let span = state.b - state.a;
    let data = hcp
        .data()
        .chunks_exact(2)
        .map(|p| C64::new(state.a + span * p[0], state.a + span * p[1]))
        .collect();
    CMatrix::from_vec(s[0], s[1], data)
}

/// The full preprocessing chain for fixed extents and normalization.
#[derive(Debug)]
pub struct Preprocessor {
    pub nc: usize,
    pub nt: usize,
    pub nc_crop: usize,
    pub state: PreprocState,
    transform: AngularDelay,
}

impl Preprocessor {
    pub fn new(nc: usize, nt: usize, nc_crop: usize, state: PreprocState) -> Result<Self> {
        state.validate()?;
        if nc_crop > nc || nc_crop == 0 || nt == 0 {
            return Err(Error::Config(format!("invalid extents nc={nc} nt={nt} nc_crop={nc_crop}")));
        }
        if state.shift >= nc {
            return Err(Error::Config(format!("shift {} not below {nc}", state.shift)));
        }
        Ok(Self { nc, nt, nc_crop, state, transform: AngularDelay::new(nc, nt) })
    }

    /// Fits the normalization to a training set and returns the preprocessor.
    pub fn fit(train: &[CMatrix], nc_crop: usize, shift: usize) -> Result<Self> {
        let first = train.first().ok_or_else(|| Error::Config("empty training set".into()))?;
        let (nc, nt) = (first.rows, first.cols);
        let transform = AngularDelay::new(nc, nt);
        let cropped = train
            .iter()
            .map(|h| crop_shift(&transform.forward(h)?, shift, nc_crop))
            .collect::<Result<Vec<_>>>()?;
        let state = PreprocState::fit(&cropped, shift)?;
        Ok(Self { nc, nt, nc_crop, state, transform })
    }

    pub fn angular_delay(&self) -> &AngularDelay {
        &self.transform
    }

    /// Cropped complex angular-delay matrix `H⁽ᵃ⁾_cc`.
    pub fn crop(&self, h: &CMatrix) -> Result<CMatrix> {
        crop_shift(&self.transform.forward(h)?, self.state.shift, self.nc_crop)
    }

    /// `H ↦ (H⁽ᵃ⁾_cc, H⁽ᵃ⁾_cp)`.
    pub fn forward(&self, h: &CMatrix) -> Result<(CMatrix, Tensor)> {
        let cc = self.crop(h)?;
        let cp = split_normalize(&cc, &self.state)?;
        Ok((cc, cp))
    }

    /// `Ĥ_cp ↦ (Ĥ_cc, Ĥ)`: de-normalize, zero-pad the dropped delay rows,
    /// undo the shift, and apply `F_aᴴ(·)F_b`.
    pub fn invert(&self, hcp: &Tensor) -> Result<(CMatrix, CMatrix)> {
        let cc = denormalize(hcp, &self.state)?;
        if (cc.rows, cc.cols) != (self.nc_crop, self.nt) {
            return dim_err(format!("{}×{} recovery for a {}×{} crop", cc.rows, cc.cols, self.nc_crop, self.nt));
        }
        let mut full = CMatrix::zeros(self.nc, self.nt);
        for r in 0..self.nc_crop {
            let dst = (r + self.nc - self.state.shift) % self.nc;
            full.data[dst * self.nt..(dst + 1) * self.nt].copy_from_slice(cc.row(r));
        }
        let h = self.transform.inverse(&full)?;
        Ok((cc, h))
    }
}
