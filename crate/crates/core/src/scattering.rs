//! STQN cascade U[j1:M] and the pre-pooling transform T[j1:M] by FFT filtering.

use crate::error::{Error, Result};
use crate::models::{eval_psi_hat_scaled, scale_factor, WaveletSpec};
use crate::synth::{real_part_checked, GridSpec, SampledPath, Synthesizer};
use crate::rng::replica_seed;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

/// Grid-admissibility thresholds for the filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterSettings {
    /// |psi_hat| below this fraction of its sup counts as outside the passband.
    pub alias_tol: f64,
    /// Largest allowed scaled frequency step 2^j * dlambda.
    pub max_scaled_step: f64,
    /// Fraction of the span discarded at each end before sampling.
    pub guard: f64,
}

impl Default for ScatterSettings {
    fn default() -> Self {
        ScatterSettings {
            alias_tol: 1e-6,
            max_scaled_step: 0.5,
            guard: 0.125,
        }
    }
}

/// Filter bank for one (wavelet, grid) pair.
pub struct Scatterer {
    wavelet: WaveletSpec,
    grid: GridSpec,
    settings: ScatterSettings,
    radius: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    twiddle: Arc<Vec<Complex64>>,
    filters: Mutex<HashMap<i32, Arc<Vec<Complex64>>>>,
}

impl std::fmt::Debug for Scatterer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scatterer")
            .field("wavelet", &self.wavelet.label)
            .field("grid", &self.grid)
            .field("settings", &self.settings)
            .finish()
    }
}

impl Scatterer {
    pub fn new(wavelet: &WaveletSpec, grid: GridSpec, settings: ScatterSettings) -> Result<Self> {
        grid.validate()?;
        if !(0.0..0.5).contains(&settings.guard) {
            return Err(Error::invalid("guard fraction must lie in [0, 0.5)"));
        }
        let mut planner = FftPlanner::new();
        let n = grid.n;
        let twiddle = (0..n)
            .map(|q| Complex64::from_polar(1.0, 2.0 * PI * q as f64 / n as f64))
            .collect();
        Ok(Scatterer {
            wavelet: wavelet.clone(),
            grid,
            settings,
            radius: wavelet.support_radius(settings.alias_tol),
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            twiddle: Arc::new(twiddle),
            filters: Mutex::new(HashMap::new()),
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn wavelet(&self) -> &WaveletSpec {
        &self.wavelet
    }

    pub fn settings(&self) -> ScatterSettings {
        self.settings
    }

    /// Rejects scales whose filter is under-resolved or aliased. `prev` is the
    /// scale of the squared layer feeding this filter, if any.
    pub fn check_scale(&self, j: i32, prev: Option<i32>) -> Result<()> {
        let s = scale_factor(j);
        let step = s * self.grid.dlambda();
        if step > self.settings.max_scaled_step {
            return Err(Error::ScaleUnresolved {
                scale: j,
                reason: format!(
                    "scaled frequency step 2^j*dlambda = {step:.4} exceeds {}; use a longer span n*dt",
                    self.settings.max_scaled_step
                ),
            });
        }
        let nyq = self.grid.nyquist();
        let band = self.radius / s;
        if band > nyq {
            return Err(Error::ScaleUnresolved {
                scale: j,
                reason: format!("passband edge {band:.4} exceeds the Nyquist frequency {nyq:.4}"),
            });
        }
        if let Some(p) = prev {
            let squared = 2.0 * self.radius / scale_factor(p);
            if squared + band > 2.0 * nyq {
                return Err(Error::ScaleUnresolved {
                    scale: j,
                    reason: format!(
                        "squared layer at j={p} spreads to {squared:.4}; its alias reaches the passband {band:.4} (2*Nyquist = {:.4})",
                        2.0 * nyq
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn check_scales(&self, scales: &[i32]) -> Result<()> {
        if scales.is_empty() {
            return Err(Error::invalid("scale vector must be non-empty"));
        }
        for (m, &j) in scales.iter().enumerate() {
            self.check_scale(j, if m == 0 { None } else { Some(scales[m - 1]) })?;
        }
        Ok(())
    }

    /// Scales that decrease are allowed but unusual.
    pub fn scale_warnings(scales: &[i32]) -> Vec<String> {
        scales
            .windows(2)
            .filter(|w| w[1] < w[0])
            .map(|w| format!("scale vector decreases from {} to {}", w[0], w[1]))
            .collect()
    }

    /// psi_hat_j on the DFT frequency grid.
    pub fn filter(&self, j: i32) -> Arc<Vec<Complex64>> {
        let mut cache = self.filters.lock().expect("filter cache poisoned");
        cache
            .entry(j)
            .or_insert_with(|| {
                Arc::new(
                    (0..self.grid.n)
                        .map(|k| eval_psi_hat_scaled(&self.wavelet, j, self.grid.freq(k)))
                        .collect(),
                )
            })
            .clone()
    }

    fn check_path(&self, path: &SampledPath) -> Result<()> {
        if path.len() != self.grid.n || path.dt != self.grid.dt {
            return Err(Error::invalid(format!(
                "path grid (n={}, dt={}) differs from the filter bank grid (n={}, dt={})",
                path.len(),
                path.dt,
                self.grid.n,
                self.grid.dt
            )));
        }
        Ok(())
    }

    fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    /// Filters an unnormalized spectrum in place and returns the real signal,
    /// scaled by `norm`.
    fn filter_inverse(&self, spec: &mut [Complex64], j: i32, norm: f64) -> Result<Vec<f64>> {
        let h = self.filter(j);
        for (c, f) in spec.iter_mut().zip(h.iter()) {
            *c *= f * norm;
        }
        self.inv.process(spec);
        real_part_checked(spec)
    }

    /// X * psi_j computed as IFFT(FFT(X) psi_hat_j).
    pub fn wavelet_transform(&self, path: &SampledPath, j: i32) -> Result<SampledPath> {
        self.check_path(path)?;
        self.check_scale(j, None)?;
        let mut spec = self.forward(&path.values);
        let y = self.filter_inverse(&mut spec, j, 1.0 / self.grid.n as f64)?;
        Ok(path.with_values(y, &format!("wavelet_transform[j={j}]")))
    }

    /// U[j]X = |X * psi_j|^2.
    pub fn stqn_layer(&self, path: &SampledPath, j: i32) -> Result<SampledPath> {
        let y = self.wavelet_transform(path, j)?;
        let v = y.values.iter().map(|v| v * v).collect();
        Ok(path.with_values(v, &format!("stqn_layer[j={j}]")))
    }

    /// T[j1:M]X = U[j1:M-1]X * psi_{jM}.
    pub fn t_transform(&self, path: &SampledPath, scales: &[i32]) -> Result<SampledPath> {
        self.check_path(path)?;
        self.check_scales(scales)?;
        let n = self.grid.n as f64;
        let mut spec = self.forward(&path.values);
        let m = scales.len();
        for &j in &scales[..m - 1] {
            let y = self.filter_inverse(&mut spec, j, 1.0 / n)?;
            let sq: Vec<f64> = y.iter().map(|v| v * v).collect();
            spec = self.forward(&sq);
        }
        let t = self.filter_inverse(&mut spec, scales[m - 1], 1.0 / n)?;
        Ok(path.with_values(t, &format!("t_transform{scales:?}")))
    }

    /// U[j1:M]X, the M-fold composition of squared wavelet layers.
    pub fn stqn_cascade(&self, path: &SampledPath, scales: &[i32]) -> Result<SampledPath> {
        self.check_scales(scales)?;
        let mut cur = path.clone();
        for &j in scales {
            cur = self.stqn_layer(&cur, j)?;
        }
        Ok(path.with_values(cur.values, &format!("stqn_cascade{scales:?}")))
    }

    /// Grid indices of rescaled times 2^{jM} t measured from the start of the
    /// guarded window, and the largest nearest-point offset.
    pub fn time_indices(&self, jm: i32, times: &[f64]) -> Result<(Vec<usize>, f64)> {
        let n = self.grid.n;
        let g = (self.settings.guard * n as f64).floor() as usize;
        let usable = (n - 2 * g) as f64 * self.grid.dt;
        let s = scale_factor(jm);
        let tmax = times.iter().cloned().fold(0.0f64, |a, t| a.max(t.abs()));
        let mut idx = Vec::with_capacity(times.len());
        let mut offset = 0.0f64;
        for &t in times {
            let x = s * t / self.grid.dt;
            let k = x.round();
            let i = g as f64 + k;
            if !t.is_finite() || t < 0.0 || i >= (n - g) as f64 {
                let max_j = if tmax > 0.0 { (usable / tmax).log2().floor() as i64 } else { i64::MAX };
                return Err(Error::invalid(format!(
                    "rescaled time 2^{jm}*{t} lies outside the usable span {usable}; maximum feasible jM for these times is {max_j}"
                )));
            }
            offset = offset.max((x - k).abs() * self.grid.dt);
            idx.push(i as usize);
        }
        // Each sample must sit a filter's reach away from the periodic seam.
        if s * self.grid.dt * times.len().max(1) as f64 > usable {
            return Err(Error::invalid(format!(
                "2^{jm}*dt times {} sample times exceeds the usable span {usable}",
                times.len()
            )));
        }
        Ok((idx, offset))
    }

    /// Real part of the inverse DFT of `spec * psi_hat_j` at sample index `m`,
    /// with normalization `norm`.
    fn direct_at(&self, spec: &[Complex64], h: &[Complex64], m: usize, norm: f64) -> f64 {
        let n = self.grid.n;
        let mut acc = 0.0;
        let mut q = 0usize;
        for k in 0..n {
            let c = spec[k] * h[k];
            let w = self.twiddle[q];
            acc += c.re * w.re - c.im * w.im;
            q += m;
            if q >= n {
                q -= n;
            }
        }
        acc * norm
    }

    /// T values for one replica spectrum (unnormalized, as produced by
    /// [`Synthesizer::spectrum`]) at several final scales and grid indices.
    /// Returns `[jm][time]`.
    pub fn t_from_spectrum(
        &self,
        mut spec: Vec<Complex64>,
        prefix: &[i32],
        jms: &[i32],
        indices: &[Vec<usize>],
    ) -> Result<Vec<Vec<f64>>> {
        let n = self.grid.n as f64;
        // The synthesizer spectrum is already the DFT divided by n.
        let mut norm = 1.0;
        for &j in prefix {
            let y = self.filter_inverse(&mut spec, j, norm)?;
            let sq: Vec<f64> = y.iter().map(|v| v * v).collect();
            spec = self.forward(&sq);
            norm = 1.0 / n;
        }
        Ok(jms
            .iter()
            .zip(indices)
            .map(|(&j, idx)| {
                let h = self.filter(j);
                idx.iter().map(|&m| self.direct_at(&spec, &h, m, norm)).collect()
            })
            .collect())
    }

    /// Samples of 2^{jM} U[j1:M]X(2^{jM} t_i), one row per replica.
    pub fn rescaled_samples(&self, ensemble: &Ensemble, scales: &[i32], times: &[f64]) -> Result<RescaledSamples> {
        let (prefix, jm) = scales.split_at(scales.len().saturating_sub(1));
        let t = self.sample_t(ensemble, prefix, jm, times)?;
        Ok(RescaledSamples {
            values: t.rescaled_u(0),
            times: times.to_vec(),
            max_time_offset: t.max_time_offset,
        })
    }

    /// Same as [`Scatterer::rescaled_samples`] for explicitly given paths.
    pub fn rescaled_samples_paths(&self, paths: &[SampledPath], scales: &[i32], times: &[f64]) -> Result<RescaledSamples> {
        let jm = *scales.last().ok_or_else(|| Error::invalid("scale vector must be non-empty"))?;
        self.check_scales(scales)?;
        let (idx, off) = self.time_indices(jm, times)?;
        let s = scale_factor(jm);
        let values = paths
            .par_iter()
            .map(|p| {
                let t = self.t_transform(p, scales)?;
                Ok(idx.iter().map(|&i| s * t.values[i] * t.values[i]).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(RescaledSamples {
            values,
            times: times.to_vec(),
            max_time_offset: off,
        })
    }

    /// T[prefix, jM] at the rescaled times for every replica and every jM.
    pub fn sample_t(&self, ensemble: &Ensemble, prefix: &[i32], jms: &[i32], times: &[f64]) -> Result<TSamples> {
        if jms.is_empty() {
            return Err(Error::invalid("at least one final scale is required"));
        }
        if ensemble.synth.grid() != self.grid {
            return Err(Error::invalid("ensemble grid differs from the filter bank grid"));
        }
        for &jm in jms {
            let mut sc = prefix.to_vec();
            sc.push(jm);
            self.check_scales(&sc)?;
        }
        let mut indices = Vec::new();
        let mut offset = 0.0f64;
        for &jm in jms {
            let (i, o) = self.time_indices(jm, times)?;
            indices.push(i);
            offset = offset.max(o);
        }
        let rows = (0..ensemble.replicas as u64)
            .into_par_iter()
            .map(|k| self.t_from_spectrum(ensemble.spectrum(k), prefix, jms, &indices))
            .collect::<Result<Vec<Vec<Vec<f64>>>>>()?;
        // Transpose to [jm][replica][time].
        let values = (0..jms.len())
            .map(|a| rows.iter().map(|r| r[a].clone()).collect())
            .collect();
        Ok(TSamples {
            prefix: prefix.to_vec(),
            jms: jms.to_vec(),
            times: times.to_vec(),
            values,
            max_time_offset: offset,
        })
    }
}

/// A lazily generated set of independent replicas.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub synth: Synthesizer,
    pub master_seed: u64,
    pub replicas: usize,
}

impl Ensemble {
    pub fn new(synth: Synthesizer, master_seed: u64, replicas: usize) -> Self {
        Ensemble {
            synth,
            master_seed,
            replicas,
        }
    }

    pub fn seed(&self, k: u64) -> u64 {
        replica_seed(self.master_seed, "synth", k)
    }

    pub fn spectrum(&self, k: u64) -> Vec<Complex64> {
        self.synth.spectrum(self.seed(k))
    }

    pub fn path(&self, k: u64) -> Result<SampledPath> {
        self.synth.synthesize(self.seed(k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RescaledSamples {
    /// One row per replica, one column per requested time.
    pub values: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub max_time_offset: f64,
}

/// Signed T samples, `values[jm][replica][time]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TSamples {
    pub prefix: Vec<i32>,
    pub jms: Vec<i32>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<Vec<f64>>>,
    pub max_time_offset: f64,
}

impl TSamples {
    pub fn replicas(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// 2^{jM} T^2.
    pub fn rescaled_u(&self, a: usize) -> Vec<Vec<f64>> {
        let s = scale_factor(self.jms[a]);
        self.values[a].iter().map(|r| r.iter().map(|t| s * t * t).collect()).collect()
    }

    /// 2^{jM/2} T.
    pub fn rescaled_t(&self, a: usize) -> Vec<Vec<f64>> {
        let s = scale_factor(self.jms[a]).sqrt();
        self.values[a].iter().map(|r| r.iter().map(|t| s * t).collect()).collect()
    }

    pub fn index_of(&self, jm: i32) -> Option<usize> {
        self.jms.iter().position(|&j| j == jm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{filtered_l1, SpectralDensity};
    use crate::quad::Tolerance;
    use crate::synth::PathMeta;

    fn bank(n: usize, dt: f64) -> Scatterer {
        Scatterer::new(&WaveletSpec::mexican_hat(), GridSpec::new(n, dt).unwrap(), ScatterSettings::default()).unwrap()
    }

    fn path_of(values: Vec<f64>, dt: f64) -> SampledPath {
        SampledPath::new(values, dt, 0.0, 0, PathMeta { density: "test".into(), method: "test".into() }).unwrap()
    }

    fn random_path(n: usize, dt: f64, seed: u64) -> SampledPath {
        let sd = SpectralDensity::gauss_lrd(0.5).unwrap();
        Synthesizer::new(&sd, GridSpec::new(n, dt).unwrap()).unwrap().synthesize(seed).unwrap()
    }

    #[test]
    fn constant_path_is_annihilated() {
        let s = bank(1024, 0.25);
        let y = s.wavelet_transform(&path_of(vec![3.5; 1024], 0.25), 1).unwrap();
        assert!(y.values.iter().all(|v| v.abs() < 1e-10 * 3.5));
    }

    #[test]
    fn linearity() {
        let s = bank(1024, 0.25);
        let x = random_path(1024, 0.25, 1);
        let y = random_path(1024, 0.25, 2);
        let z = path_of(x.values.iter().zip(&y.values).map(|(a, b)| 2.0 * a - 0.5 * b).collect(), 0.25);
        let (tx, ty, tz) = (s.wavelet_transform(&x, 1).unwrap(), s.wavelet_transform(&y, 1).unwrap(), s.wavelet_transform(&z, 1).unwrap());
        let scale = tz.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..1024 {
            assert!((tz.values[i] - (2.0 * tx.values[i] - 0.5 * ty.values[i])).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn pure_tone_response() {
        let (n, dt) = (4096usize, 0.125);
        let s = bank(n, dt);
        let g = s.grid();
        let k0 = 40;
        let l0 = g.freq(k0);
        let x = path_of((0..n).map(|m| (l0 * m as f64 * dt).cos()).collect(), dt);
        let j = 1;
        let gain = eval_psi_hat_scaled(&WaveletSpec::mexican_hat(), j, l0).re;
        let y = s.wavelet_transform(&x, j).unwrap();
        for m in (0..n).step_by(97) {
            assert!((y.values[m] - gain * x.values[m]).abs() < 1e-10);
        }
    }

    #[test]
    fn filtering_is_diagonal() {
        let s = bank(512, 0.25);
        let x = random_path(512, 0.25, 3);
        let y = s.wavelet_transform(&x, 0).unwrap();
        let (fx, fy) = (s.forward(&x.values), s.forward(&y.values));
        let h = s.filter(0);
        let scale = fx.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        for k in 0..512 {
            assert!((fy[k] - fx[k] * h[k]).norm() < 1e-10 * scale);
        }
    }

    #[test]
    fn u_equals_t_squared_and_depth_one() {
        let s = bank(4096, 0.25);
        let x = random_path(4096, 0.25, 4);
        for scales in [vec![0], vec![0, 3], vec![0, 1, 4]] {
            let u = s.stqn_cascade(&x, &scales).unwrap();
            let t = s.t_transform(&x, &scales).unwrap();
            let umax = u.values.iter().cloned().fold(0.0, f64::max);
            for (a, b) in u.values.iter().zip(&t.values) {
                assert!((a - b * b).abs() <= 1e-10 * umax);
                assert!(*a >= 0.0);
            }
        }
        assert_eq!(s.stqn_cascade(&x, &[2]).unwrap().values, s.stqn_layer(&x, 2).unwrap().values);
        assert_eq!(s.t_transform(&x, &[2]).unwrap().values, s.wavelet_transform(&x, 2).unwrap().values);
    }

    #[test]
    fn shift_equivariance() {
        let s = bank(2048, 0.25);
        let x = random_path(2048, 0.25, 5);
        let k = 37;
        let mut shifted = x.values.clone();
        shifted.rotate_right(k);
        let a = s.stqn_cascade(&x, &[0, 2]).unwrap();
        let b = s.stqn_cascade(&path_of(shifted, 0.25), &[0, 2]).unwrap();
        let mut a_shift = a.values.clone();
        a_shift.rotate_right(k);
        let umax = a.values.iter().cloned().fold(0.0, f64::max);
        for (p, q) in a_shift.iter().zip(&b.values) {
            assert!((p - q).abs() < 1e-10 * umax);
        }
    }

    #[test]
    fn unresolved_scales_name_the_scale() {
        let s = bank(1024, 0.25);
        match s.check_scale(8, None).unwrap_err() {
            Error::ScaleUnresolved { scale, .. } => assert_eq!(scale, 8),
            e => panic!("{e:?}"),
        }
        let coarse = bank(1 << 14, 1.0);
        assert!(matches!(coarse.check_scale(-1, None), Err(Error::ScaleUnresolved { scale: -1, .. })));
        assert!(coarse.check_scales(&[0, 1]).is_err());
    }

    #[test]
    fn spectrum_route_matches_path_route() {
        let sd = SpectralDensity::gauss_lrd(0.5).unwrap();
        let grid = GridSpec::new(4096, 0.25).unwrap();
        let synth = Synthesizer::new(&sd, grid).unwrap();
        let s = bank(4096, 0.25);
        let ens = Ensemble::new(synth, 11, 3);
        let times = [0.0, 0.5, 1.0, 1.0];
        let direct = s.sample_t(&ens, &[0], &[3], &times).unwrap();
        let (idx, _) = s.time_indices(3, &times).unwrap();
        for k in 0..3 {
            let t = s.t_transform(&ens.path(k as u64).unwrap(), &[0, 3]).unwrap();
            for (c, &i) in idx.iter().enumerate() {
                let a = direct.values[0][k][c];
                assert!((a - t.values[i]).abs() < 1e-10 * t.values[i].abs().max(1e-3), "{a} vs {}", t.values[i]);
            }
            assert_eq!(direct.values[0][k][2], direct.values[0][k][3]);
        }
        let r = s.rescaled_samples(&ens, &[0, 3], &times).unwrap();
        assert!(r.values.iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn time_outside_span_reports_max_scale() {
        let s = bank(1024, 0.25);
        let e = s.time_indices(6, &[10.0]).unwrap_err().to_string();
        assert!(e.contains("maximum feasible jM"), "{e}");
    }

    #[test]
    fn first_layer_mean_is_filtered_mass() {
        let sd = SpectralDensity::gauss_lrd(0.5).unwrap();
        let grid = GridSpec::new(1 << 12, 0.25).unwrap();
        let s = bank(1 << 12, 0.25);
        let ens = Ensemble::new(Synthesizer::new(&sd, grid).unwrap(), 3, 2000);
        let r = s.rescaled_samples(&ens, &[1], &[0.0]).unwrap();
        let v: Vec<f64> = r.values.iter().map(|row| row[0]).collect();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let se = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        let target = 2.0 * filtered_l1(&sd, &WaveletSpec::mexican_hat(), 1, &Tolerance::new(1e-13, 1e-10)).unwrap();
        assert!((m - target).abs() < 3.0 * se, "{m} vs {target} (se {se})");
    }

    #[test]
    fn stationarity_across_windows() {
        let sd = SpectralDensity::gauss_lrd(0.5).unwrap();
        let s = bank(1 << 13, 0.25);
        let synth = Synthesizer::new(&sd, s.grid()).unwrap();
        let reps = 200;
        let (mut w1, mut w2) = (Vec::new(), Vec::new());
        for k in 0..reps {
            let u = s.stqn_cascade(&synth.synthesize_replica(8, k).unwrap(), &[0, 2]).unwrap();
            let n = u.len();
            w1.push(u.values[n / 8..n / 2].iter().sum::<f64>() / (3 * n / 8) as f64);
            w2.push(u.values[n / 2..7 * n / 8].iter().sum::<f64>() / (3 * n / 8) as f64);
        }
        let d: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a - b).collect();
        let m = d.iter().sum::<f64>() / reps as f64;
        let se = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0) / reps as f64).sqrt();
        assert!(m.abs() < 3.0 * se, "{m} {se}");
    }
}
