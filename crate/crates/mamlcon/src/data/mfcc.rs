//! MFCC + delta + delta-delta extraction for isolated words.
//!
//! The front end is the conventional 39-dimensional one: 25 ms Hamming
//! windows every 10 ms, a 512-point power spectrum, 40 triangular filters on
//! the HTK mel scale spanning 0–Nyquist, log energies (floored), an
//! orthonormal DCT-II keeping 13 cepstra, and ±2-frame regression deltas.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Front-end settings.
#[derive(Clone, Debug, PartialEq)]
pub struct MfccConfig {
    pub sample_rate: usize,
    /// Analysis window length in samples (25 ms at 16 kHz).
    pub window: usize,
    /// Hop between frames in samples (10 ms at 16 kHz).
    pub hop: usize,
    pub fft_size: usize,
    pub mel_filters: usize,
    pub num_ceps: usize,
    /// Regression half-window for delta features.
    pub delta_window: usize,
    /// Frames every item is padded or truncated to downstream.
    pub target_frames: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            sample_rate: 16000,
            window: 400,
            hop: 160,
            fft_size: 512,
            mel_filters: 40,
            num_ceps: 13,
            delta_window: 2,
            target_frames: 101,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window > self.fft_size {
            return Err(Error::Config(format!(
                "window ({}) must not exceed fft_size ({})",
                self.window, self.fft_size
            )));
        }
        if self.num_ceps > self.mel_filters {
            return Err(Error::Config(format!(
                "num_ceps ({}) must not exceed mel_filters ({})",
                self.num_ceps, self.mel_filters
            )));
        }
        if self.window == 0 || self.hop == 0 || self.mel_filters == 0 || self.num_ceps == 0 {
            return Err(Error::Config("mfcc config has a zero field".into()));
        }
        Ok(())
    }

    /// Output feature width: cepstra + deltas + delta-deltas.
    pub fn feature_dim(&self) -> usize {
        3 * self.num_ceps
    }

    /// Frames produced for a waveform of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            1 + (len - self.window) / self.hop
        }
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular mel filter: its passband edges and per-bin weights.
#[derive(Clone, Debug)]
pub struct MelFilter {
    pub left_hz: f64,
    pub center_hz: f64,
    pub right_hz: f64,
    /// One weight per non-negative frequency bin (`fft_size/2 + 1`).
    pub weights: Vec<f64>,
}

/// Triangular filterbank with centers equally spaced on the mel scale from
/// 0 Hz to Nyquist.
pub fn mel_filterbank(cfg: &MfccConfig) -> Vec<MelFilter> {
    let n_bins = cfg.fft_size / 2 + 1;
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let n = cfg.mel_filters;
    let hz_points: Vec<f64> = (0..n + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    (0..n)
        .map(|m| {
            let (left, center, right) = (hz_points[m], hz_points[m + 1], hz_points[m + 2]);
            let weights = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f > left && f <= center {
                        (f - left) / (center - left)
                    } else if f > center && f < right {
                        (right - f) / (right - center)
                    } else {
                        0.0
                    }
                })
                .collect();
            MelFilter {
                left_hz: left,
                center_hz: center,
                right_hz: right,
                weights,
            }
        })
        .collect()
}

/// Orthonormal DCT-II.
pub fn dct2_orthonormal(input: &[f64]) -> Vec<f64> {
    let n = input.len();
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    (0..n)
        .map(|k| {
            let s: f64 = input
                .iter()
                .enumerate()
                .map(|(i, &x)| x * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
                .sum();
            s * if k == 0 { norm0 } else { norm }
        })
        .collect()
}

/// Inverse of [`dct2_orthonormal`] (an orthonormal DCT-III).
pub fn idct2_orthonormal(input: &[f64]) -> Vec<f64> {
    let n = input.len();
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    (0..n)
        .map(|i| {
            input
                .iter()
                .enumerate()
                .map(|(k, &x)| {
                    let scale = if k == 0 { norm0 } else { norm };
                    scale
                        * x
                        * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos()
                })
                .sum()
        })
        .collect()
}

/// Regression deltas over frames with edge replication.
///
/// `d[t] = Σ_{n=1..W} n·(c[t+n] − c[t−n]) / (2·Σ n²)`, indices clamped.
pub fn compute_deltas(frames: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    if frames.is_empty() {
        return Vec::new();
    }
    let dim = frames[0].len();
    let t_max = frames.len() - 1;
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    (0..frames.len())
        .map(|t| {
            let mut d = vec![0.0; dim];
            for n in 1..=window {
                let ahead = &frames[(t + n).min(t_max)];
                let behind = &frames[t.saturating_sub(n)];
                for c in 0..dim {
                    d[c] += n as f64 * (ahead[c] - behind[c]);
                }
            }
            for v in &mut d {
                *v /= denom;
            }
            d
        })
        .collect()
}

/// Extract a `[frames, 3·num_ceps]` feature matrix from a waveform.
pub fn mfcc(waveform: &[f64], cfg: &MfccConfig) -> Result<Tensor> {
    cfg.validate()?;
    if waveform.len() < cfg.window {
        return Err(Error::Data(format!(
            "waveform of {} samples is shorter than one {}-sample window",
            waveform.len(),
            cfg.window
        )));
    }
    let n_frames = cfg.frame_count(waveform.len());
    let filterbank = mel_filterbank(cfg);
    let hamming: Vec<f64> = (0..cfg.window)
        .map(|i| {
            0.54 - 0.46
                * (2.0 * std::f64::consts::PI * i as f64 / (cfg.window as f64 - 1.0)).cos()
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let n_bins = cfg.fft_size / 2 + 1;

    let mut cepstra = Vec::with_capacity(n_frames);
    let mut buffer = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    for t in 0..n_frames {
        let start = t * cfg.hop;
        buffer.fill(Complex::new(0.0, 0.0));
        for i in 0..cfg.window {
            buffer[i] = Complex::new(waveform[start + i] * hamming[i], 0.0);
        }
        fft.process(&mut buffer);
        let power: Vec<f64> = buffer[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        let log_mel: Vec<f64> = filterbank
            .iter()
            .map(|f| {
                let e: f64 = f.weights.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(1e-10).ln()
            })
            .collect();
        let mut ceps = dct2_orthonormal(&log_mel);
        ceps.truncate(cfg.num_ceps);
        cepstra.push(ceps);
    }

    let deltas = compute_deltas(&cepstra, cfg.delta_window);
    let delta_deltas = compute_deltas(&deltas, cfg.delta_window);
    let dim = cfg.feature_dim();
    let mut data = Vec::with_capacity(n_frames * dim);
    for t in 0..n_frames {
        data.extend_from_slice(&cepstra[t]);
        data.extend_from_slice(&deltas[t]);
        data.extend_from_slice(&delta_deltas[t]);
    }
    Tensor::new(vec![n_frames, dim], data)
}

/// Zero-pad with trailing rows, or drop trailing frames, to exactly
/// `target_frames` rows.
pub fn pad_or_truncate(features: &Tensor, target_frames: usize) -> Result<Tensor> {
    let (frames, dim) = match *features.shape() {
        [f, d] => (f, d),
        _ => {
            return Err(Error::shape(
                "pad_or_truncate",
                format!("features must be [frames, dim], got {:?}", features.shape()),
            ))
        }
    };
    if target_frames == 0 {
        return Err(Error::Config("target_frames must be positive".into()));
    }
    if frames == target_frames {
        return Ok(features.clone());
    }
    let mut data = Vec::with_capacity(target_frames * dim);
    let keep = frames.min(target_frames);
    data.extend_from_slice(&features.data()[..keep * dim]);
    data.resize(target_frames * dim, 0.0);
    Tensor::new(vec![target_frames, dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::seeding::rng_from;

    #[test]
    fn one_second_input_gives_98_by_39() {
        let cfg = MfccConfig::default();
        let wave: Vec<f64> = (0..16000).map(|i| (i as f64 * 0.01).sin()).collect();
        let feats = mfcc(&wave, &cfg).unwrap();
        assert_eq!(feats.shape(), &[98, 39]);
    }

    #[test]
    fn frame_count_formula() {
        let cfg = MfccConfig::default();
        assert_eq!(cfg.frame_count(16000), 98);
        assert_eq!(cfg.frame_count(400), 1);
        assert_eq!(cfg.frame_count(559), 1);
        assert_eq!(cfg.frame_count(560), 2);
    }

    #[test]
    fn too_short_waveform_is_an_error() {
        let cfg = MfccConfig::default();
        assert!(mfcc(&vec![0.0; 399], &cfg).is_err());
    }

    #[test]
    fn deltas_of_constant_sequence_are_zero() {
        let frames = vec![vec![1.0, -2.0, 0.5]; 12];
        for d in compute_deltas(&frames, 2) {
            assert!(d.iter().all(|&v| v == 0.0));
        }
        let dd = compute_deltas(&compute_deltas(&frames, 2), 2);
        assert!(dd.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn deltas_of_linear_ramp_are_the_slope() {
        let frames: Vec<Vec<f64>> = (0..10).map(|t| vec![2.0 * t as f64]).collect();
        let d = compute_deltas(&frames, 2);
        // Interior frames see the exact slope.
        for row in &d[2..8] {
            assert!((row[0] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_tone_peaks_in_the_filter_containing_its_frequency() {
        let cfg = MfccConfig::default();
        let freq = 1000.0;
        let wave: Vec<f64> = (0..16000)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
            .collect();
        let filterbank = mel_filterbank(&cfg);

        // Filterbank energies of the middle frame.
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(cfg.fft_size);
        let hamming: Vec<f64> = (0..cfg.window)
            .map(|i| {
                0.54 - 0.46
                    * (2.0 * std::f64::consts::PI * i as f64 / (cfg.window as f64 - 1.0)).cos()
            })
            .collect();
        let mut buffer = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let start = 40 * cfg.hop;
        for i in 0..cfg.window {
            buffer[i] = Complex::new(wave[start + i] * hamming[i], 0.0);
        }
        fft.process(&mut buffer);
        let power: Vec<f64> = buffer[..cfg.fft_size / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        let energies: Vec<f64> = filterbank
            .iter()
            .map(|f| f.weights.iter().zip(&power).map(|(w, p)| w * p).sum())
            .collect();
        let best = energies
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let f = &filterbank[best];
        assert!(
            f.left_hz < freq && freq < f.right_hz,
            "peak filter {best} spans [{:.1}, {:.1}] Hz",
            f.left_hz,
            f.right_hz
        );
    }

    #[test]
    fn dct_roundtrip_recovers_input() {
        let mut rng = rng_from(7);
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(-5.0..5.0)).collect();
        let back = idct2_orthonormal(&dct2_orthonormal(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mel_scale_roundtrip() {
        for hz in [0.0, 300.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
        }
    }

    #[test]
    fn padding_appends_zero_rows_and_preserves_content() {
        let feats = Tensor::new(vec![98, 3], (0..98 * 3).map(|i| i as f64).collect()).unwrap();
        let padded = pad_or_truncate(&feats, 101).unwrap();
        assert_eq!(padded.shape(), &[101, 3]);
        assert_eq!(&padded.data()[..98 * 3], feats.data());
        assert!(padded.data()[98 * 3..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn truncation_keeps_leading_frames() {
        let feats = Tensor::new(vec![150, 2], (0..300).map(|i| i as f64).collect()).unwrap();
        let cut = pad_or_truncate(&feats, 101).unwrap();
        assert_eq!(cut.shape(), &[101, 2]);
        assert_eq!(cut.data(), &feats.data()[..202]);
    }

    #[test]
    fn exact_length_is_bitwise_identity() {
        let feats = Tensor::new(vec![101, 2], (0..202).map(|i| i as f64 * 0.5).collect()).unwrap();
        let same = pad_or_truncate(&feats, 101).unwrap();
        assert_eq!(same, feats);
    }

    #[test]
    fn mfcc_is_deterministic() {
        let cfg = MfccConfig::default();
        let wave: Vec<f64> = (0..8000).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = mfcc(&wave, &cfg).unwrap();
        let b = mfcc(&wave, &cfg).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
