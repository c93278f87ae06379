//! Sliding-window fALFF features and tensor preprocessing.
//!
//! fALFF of a window is the summed DFT magnitude inside a low-frequency band
//! divided by the summed magnitude over all non-DC bins up to Nyquist.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::tensor::DenseTensor3;

/// Uniformly sampled series sharing one sampling interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSet {
    /// Seconds per sample.
    interval: f64,
    n_samples: usize,
    series: Vec<Vec<f64>>,
}

impl TimeSeriesSet {
    pub fn new(interval: f64, series: Vec<Vec<f64>>) -> Result<Self> {
        if !(interval > 0.0 && interval.is_finite()) {
            return arg_err(format!("sampling interval must be positive, got {interval}"));
        }
        let n_samples = series.first().map_or(0, Vec::len);
        for (s, v) in series.iter().enumerate() {
            if v.len() != n_samples {
                return arg_err(format!("series {s} has {} samples, expected {n_samples}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return arg_err(format!("series {s} has non-finite samples"));
            }
        }
        Ok(TimeSeriesSet {
            interval,
            n_samples,
            series,
        })
    }

    pub fn interval(&self) -> f64 {
        self.interval
    }

    pub fn sampling_rate(&self) -> f64 {
        1.0 / self.interval
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn series(&self) -> &[Vec<f64>] {
        &self.series
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    /// Samples per window.
    pub window: usize,
    /// Samples between window starts.
    pub stride: usize,
    /// Band edges in Hz, inclusive.
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            window: 8,
            stride: 8,
            f_lo: 0.01,
            f_hi: 0.08,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self, n_samples: usize, sampling_rate: f64) -> Result<()> {
        if self.stride == 0 {
            return arg_err("stride must be at least 1");
        }
        if self.window == 0 || self.window > n_samples {
            return arg_err(format!("window {} must be in 1..={n_samples}", self.window));
        }
        self.validate_band(sampling_rate)
    }

    fn validate_band(&self, sampling_rate: f64) -> Result<()> {
        let nyquist = sampling_rate / 2.0;
        if !(self.f_lo >= 0.0 && self.f_lo < self.f_hi && self.f_hi <= nyquist) {
            return arg_err(format!(
                "band [{}, {}] Hz must satisfy 0 <= f_lo < f_hi <= Nyquist ({nyquist} Hz)",
                self.f_lo, self.f_hi
            ));
        }
        Ok(())
    }

    pub fn n_windows(&self, n_samples: usize) -> usize {
        if self.window > n_samples || self.stride == 0 {
            0
        } else {
            (n_samples - self.window) / self.stride + 1
        }
    }
}

/// Windows of `series` at offsets `0, stride, 2·stride, …`.
pub fn sliding_windows<'a>(series: &'a [f64], spec: &WindowSpec) -> Result<Vec<&'a [f64]>> {
    if spec.stride == 0 {
        return arg_err("stride must be at least 1");
    }
    if spec.window == 0 || spec.window > series.len() {
        return arg_err(format!("window {} does not fit a series of {} samples", spec.window, series.len()));
    }
    Ok((0..spec.n_windows(series.len()))
        .map(|w| &series[w * spec.stride..w * spec.stride + spec.window])
        .collect())
}

/// Magnitude-spectrum band ratio with a cached FFT plan.
struct FalffKernel {
    fft: Arc<dyn Fft<f64>>,
    n: usize,
    /// Inclusive bin range of the band, within `1..=n/2`.
    band: std::ops::RangeInclusive<usize>,
}

impl FalffKernel {
    fn new(n: usize, spec: &WindowSpec, sampling_rate: f64) -> Result<Self> {
        if n < 4 {
            return arg_err(format!("fALFF needs windows of at least 4 samples, got {n}"));
        }
        spec.validate_band(sampling_rate)?;
        let bin_hz = sampling_rate / n as f64;
        // Bin m sits at m·rate/n; tolerate round-off at the band edges.
        let eps = 1e-9 * bin_hz;
        let lo = ((spec.f_lo - eps) / bin_hz).ceil().max(1.0) as usize;
        let hi = (((spec.f_hi + eps) / bin_hz).floor() as usize).min(n / 2);
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(FalffKernel { fft, n, band: lo..=hi })
    }

    fn ratio(&self, window: &[f64], buf: &mut Vec<Complex<f64>>) -> f64 {
        debug_assert_eq!(window.len(), self.n);
        buf.clear();
        buf.extend(window.iter().map(|&x| Complex::new(x, 0.0)));
        self.fft.process(buf);
        let mut num = 0.0;
        let mut den = 0.0;
        for (m, z) in buf.iter().enumerate().take(self.n / 2 + 1).skip(1) {
            let mag = z.norm();
            den += mag;
            if self.band.contains(&m) {
                num += mag;
            }
        }
        if den == 0.0 {
            0.0
        } else {
            (num / den).clamp(0.0, 1.0)
        }
    }
}

/// fALFF of one window sampled at `sampling_rate` Hz.
pub fn falff_window(window: &[f64], spec: &WindowSpec, sampling_rate: f64) -> Result<f64> {
    if window.iter().any(|x| !x.is_finite()) {
        return arg_err("fALFF window has non-finite samples");
    }
    let kernel = FalffKernel::new(window.len(), spec, sampling_rate)?;
    Ok(kernel.ratio(window, &mut Vec::with_capacity(window.len())))
}

/// Subjects × series × windows tensor of fALFF values.
pub fn build_falff_tensor(subjects: &[TimeSeriesSet], spec: &WindowSpec) -> Result<DenseTensor3> {
    let Some(first) = subjects.first() else {
        return arg_err("no subjects given");
    };
    let (nv, ns, interval) = (first.n_series(), first.n_samples(), first.interval());
    for (s, set) in subjects.iter().enumerate() {
        if set.n_series() != nv || set.n_samples() != ns {
            return arg_err(format!(
                "subject {s} has {}x{} samples, expected {nv}x{ns}",
                set.n_series(),
                set.n_samples()
            ));
        }
        if set.interval() != interval {
            return arg_err(format!("subject {s} sampling interval {} differs from {interval}", set.interval()));
        }
    }
    let rate = first.sampling_rate();
    spec.validate(ns, rate)?;
    let kernel = FalffKernel::new(spec.window, spec, rate)?;
    let nw = spec.n_windows(ns);
    let ni = subjects.len();
    let mut values = vec![0.0; ni * nv * nw];
    let mut buf = Vec::with_capacity(spec.window);
    for (i, set) in subjects.iter().enumerate() {
        for (j, series) in set.series().iter().enumerate() {
            for (k, w) in sliding_windows(series, spec)?.into_iter().enumerate() {
                values[k * ni * nv + i * nv + j] = kernel.ratio(w, &mut buf);
            }
        }
    }
    DenseTensor3::new((ni, nv, nw), values)
}

/// What is subtracted from each voxel fiber `T[i, :, k]` before scaling it
/// to unit norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// The fiber's own mean over voxels.
    #[default]
    Fiber,
    /// One voxel map: each voxel's mean over all subjects and windows.
    VoxelMap,
}

/// Centers every voxel fiber and scales it to unit norm.
pub fn preprocess_tensor(t: &DenseTensor3, centering: Centering) -> Result<DenseTensor3> {
    let (ni, nj, nk) = t.dims();
    let mut out = t.values().to_vec();
    let voxel_mean: Vec<f64> = match centering {
        Centering::Fiber => Vec::new(),
        Centering::VoxelMap => (0..nj)
            .map(|j| {
                let mut s = 0.0;
                for k in 0..nk {
                    for i in 0..ni {
                        s += t.get(i, j, k);
                    }
                }
                s / (ni * nk) as f64
            })
            .collect(),
    };
    for k in 0..nk {
        for i in 0..ni {
            let start = k * ni * nj + i * nj;
            let fiber = &mut out[start..start + nj];
            match centering {
                Centering::Fiber => {
                    let m = fiber.iter().sum::<f64>() / nj as f64;
                    fiber.iter_mut().for_each(|v| *v -= m);
                }
                Centering::VoxelMap => fiber.iter_mut().zip(&voxel_mean).for_each(|(v, m)| *v -= m),
            }
            let norm = fiber.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = t.values()[start..start + nj].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if norm == 0.0 || norm <= nj as f64 * f64::EPSILON * scale {
                return Err(Error::DegenerateFiber { subject: i, window: k });
            }
            fiber.iter_mut().for_each(|v| *v /= norm);
        }
    }
    DenseTensor3::new(t.dims(), out)
}
