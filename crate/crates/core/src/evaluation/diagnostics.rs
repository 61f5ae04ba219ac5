//! Pixel histograms, Fourier spectra and latent channel profiles.

use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::plot::{line_chart, Series};
use crate::autodiff::{Binder, Graph};
use crate::codec::CodecModel;
use crate::error::Result;
use crate::tensor::Tensor;

/// Counts over equal-width bins of `[lo, hi)`; values outside are tallied
/// separately.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut h = Self {
            lo,
            hi,
            counts: vec![0; bins],
            below: 0,
            above: 0,
        };
        let width = (hi - lo) / bins as f64;
        for &v in values {
            if v < lo {
                h.below += 1;
            } else if v >= hi {
                h.above += 1;
            } else {
                h.counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
            }
        }
        h
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }

    pub fn centres(&self) -> Vec<f64> {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        (0..self.counts.len()).map(|i| self.lo + (i as f64 + 0.5) * width).collect()
    }

    /// Bin centres against fractions of all values.
    pub fn density(&self) -> Vec<(f64, f64)> {
        let total = self.total().max(1) as f64;
        self.centres()
            .into_iter()
            .zip(&self.counts)
            .map(|(c, &n)| (c, n as f64 / total))
            .collect()
    }
}

/// Fraction of values outside `[lo, hi]`.
pub fn out_of_range_fraction(values: &[f64], lo: f64, hi: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| !(lo..=hi).contains(*v)).count() as f64 / values.len() as f64
}

/// Power spectrum `|F|²` of each `H`×`W` plane of a `[B, C, H, W]` tensor,
/// summed over planes, in unshifted FFT order.
pub fn power_spectrum(x: &Tensor) -> Tensor {
    let (_, _, h, w) = x.dims4();
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = (planner.plan_fft_forward(w), planner.plan_fft_forward(h));
    let mut power = vec![0.0; h * w];
    let mut buf = vec![Complex::new(0.0, 0.0); h * w];
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for plane in x.data().chunks(h * w) {
        for (b, &v) in buf.iter_mut().zip(plane) {
            *b = Complex::new(v, 0.0);
        }
        for row in buf.chunks_mut(w) {
            row_fft.process(row);
        }
        for j in 0..w {
            for i in 0..h {
                col[i] = buf[i * w + j];
            }
            col_fft.process(&mut col);
            for i in 0..h {
                buf[i * w + j] = col[i];
            }
        }
        for (p, c) in power.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
    }
    Tensor::new(&[h, w], power)
}

fn signed_frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Share of spectral energy above a quarter of Nyquist (`|k| > N/8`) on
/// either axis.
pub fn high_frequency_ratio(x: &Tensor) -> f64 {
    let p = power_spectrum(x);
    let (h, w) = (p.shape()[0], p.shape()[1]);
    let (ch, cw) = (h as f64 / 8.0, w as f64 / 8.0);
    let mut high = 0.0;
    for i in 0..h {
        for j in 0..w {
            if signed_frequency(i, h).abs() > ch || signed_frequency(j, w).abs() > cw {
                high += p.data()[i * w + j];
            }
        }
    }
    let total = p.sum();
    if total == 0.0 {
        0.0
    } else {
        high / total
    }
}

/// `log(1 + |F|)` with DC at the centre, scaled to `[0, 1]`, as a grey
/// `[1, 3, H, W]` image.
pub fn spectrum_image(x: &Tensor) -> Tensor {
    let p = power_spectrum(x);
    let (h, w) = (p.shape()[0], p.shape()[1]);
    let logmag: Vec<f64> = p.data().iter().map(|v| (1.0 + v.sqrt()).ln()).collect();
    let max = logmag.iter().copied().fold(0.0, f64::max).max(1e-12);
    let mut shifted = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            shifted[((i + h / 2) % h) * w + (j + w / 2) % w] = logmag[i * w + j] / max;
        }
    }
    let mut data = shifted.clone();
    data.extend_from_slice(&shifted);
    data.extend_from_slice(&shifted);
    Tensor::new(&[1, 3, h, w], data)
}

fn channel_mean(t: &Tensor, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let (b, c, h, w) = t.dims4();
    let mut out = vec![0.0; c];
    for (i, plane) in t.data().chunks(h * w).enumerate() {
        out[i % c] += plane.iter().map(|&v| f(v)).sum::<f64>();
    }
    out.iter().map(|e| e / (b * h * w) as f64).collect()
}

/// Mean of `v²` per channel of a `[B, C, H, W]` latent.
pub fn channel_energy(latent: &Tensor) -> Vec<f64> {
    channel_mean(latent, |v| v * v)
}

/// Mean `|∂(Σ x̂₁)/∂ŷ|` per latent channel.
pub fn synthesis_gradient_profile(model: &CodecModel, y_hat: &Tensor) -> Vec<f64> {
    let g = Graph::new();
    let b = Binder::frozen(&g, &model.params);
    let leaf = g.leaf(y_hat.clone());
    let (x, _) = model.transforms().synthesis(&b, leaf);
    let grads = g.backward(x.sum());
    let grad = grads.get(leaf).cloned().unwrap_or_else(|| Tensor::zeros(y_hat.shape()));
    channel_mean(&grad, f64::abs)
}

/// Diagnostics for one image and its two reconstructions.
#[derive(Clone, Debug)]
pub struct DiagnosticReport {
    pub histograms: [Histogram; 3],
    pub out_of_range: [f64; 3],
    pub hf_ratio: [f64; 3],
    pub spectra: [Tensor; 3],
    pub gradient_profile: Vec<f64>,
    pub energy_y: Vec<f64>,
    pub energy_y2: Vec<f64>,
}

pub const HISTOGRAM_RANGE: (f64, f64) = (-0.5, 1.5);
pub const HISTOGRAM_BINS: usize = 100;
pub const OUT_OF_RANGE_MARGIN: f64 = 0.05;

/// `x`, unclipped `x̂₁` and `x̂₂`, and the latents `ŷ` and `ŷ₂`.
pub fn diagnostics(
    model: &CodecModel,
    x: &Tensor,
    x_hat1: &Tensor,
    x_hat2: &Tensor,
    y_hat: &Tensor,
    y2_hat: &Tensor,
) -> DiagnosticReport {
    let images = [x, x_hat1, x_hat2];
    let (lo, hi) = HISTOGRAM_RANGE;
    DiagnosticReport {
        histograms: images.map(|t| Histogram::new(t.data(), lo, hi, HISTOGRAM_BINS)),
        out_of_range: images.map(|t| out_of_range_fraction(t.data(), -OUT_OF_RANGE_MARGIN, 1.0 + OUT_OF_RANGE_MARGIN)),
        hf_ratio: images.map(high_frequency_ratio),
        spectra: images.map(spectrum_image),
        gradient_profile: synthesis_gradient_profile(model, y_hat),
        energy_y: channel_energy(y_hat),
        energy_y2: channel_energy(y2_hat),
    }
}

const NAMES: [&str; 3] = ["original", "cognition", "distortion"];

impl DiagnosticReport {
    /// Writes CSV tables, spectrum PNGs and SVG charts into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut hist = String::from("bin_centre,original,cognition,distortion\n");
        let dens: Vec<Vec<(f64, f64)>> = self.histograms.iter().map(Histogram::density).collect();
        for i in 0..HISTOGRAM_BINS {
            hist.push_str(&format!("{},{},{},{}\n", dens[0][i].0, dens[0][i].1, dens[1][i].1, dens[2][i].1));
        }
        fs::write(dir.join("histogram.csv"), hist)?;
        let series: Vec<Series<'_>> = NAMES
            .iter()
            .zip(&dens)
            .map(|(label, points)| Series { label, points })
            .collect();
        fs::write(dir.join("histogram.svg"), line_chart("Pixel values", "value", "fraction", &series))?;

        let mut summary = String::from("image,hf_ratio,out_of_range\n");
        for i in 0..3 {
            summary.push_str(&format!("{},{},{}\n", NAMES[i], self.hf_ratio[i], self.out_of_range[i]));
            crate::cognition::save_image(&self.spectra[i], dir.join(format!("spectrum_{}.png", NAMES[i])))?;
        }
        fs::write(dir.join("summary.csv"), summary)?;

        let mut channels = String::from("channel,gradient,energy_y,energy_y2\n");
        for c in 0..self.energy_y.len() {
            channels.push_str(&format!(
                "{c},{},{},{}\n",
                self.gradient_profile[c], self.energy_y[c], self.energy_y2[c]
            ));
        }
        fs::write(dir.join("channels.csv"), channels)?;
        let idx = |v: &[f64]| -> Vec<(f64, f64)> { v.iter().enumerate().map(|(i, &e)| (i as f64, e)).collect() };
        let (ey, ey2, gp) = (idx(&self.energy_y), idx(&self.energy_y2), idx(&self.gradient_profile));
        fs::write(
            dir.join("channels.svg"),
            line_chart(
                "Latent channel profiles",
                "channel",
                "value",
                &[
                    Series { label: "energy y", points: &ey },
                    Series { label: "energy y2", points: &ey2 },
                    Series { label: "|d x1 / d y|", points: &gp },
                ],
            ),
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_high_frequencies() {
        let x = Tensor::full(&[1, 3, 16, 16], 0.4);
        assert_eq!(high_frequency_ratio(&x), 0.0);
        let p = power_spectrum(&x);
        assert!((p.data()[0] - 3.0 * (0.4 * 256.0f64).powi(2)).abs() < 1e-9);
        assert!(p.data()[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn checkerboard_is_all_high_frequency() {
        let data = (0..64).map(|i| ((i / 8 + i % 8) % 2) as f64 * 2.0 - 1.0).collect();
        let x = Tensor::new(&[1, 1, 8, 8], data);
        assert!((high_frequency_ratio(&x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_tallies() {
        let h = Histogram::new(&[-1.0, 0.0, 0.26, 0.5, 0.99, 1.0, 2.0], 0.0, 1.0, 4);
        assert_eq!(h.counts, vec![1, 1, 1, 1]);
        assert_eq!((h.below, h.above, h.total()), (1, 2, 7));
        assert!((out_of_range_fraction(&[-0.1, 0.5, 1.2, 1.0], 0.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn channel_energy_per_channel() {
        let t = Tensor::new(&[2, 2, 1, 1], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(channel_energy(&t), vec![5.0, 10.0]);
    }
}
