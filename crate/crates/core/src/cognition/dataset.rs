use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{RdcError, Result};
use crate::tensor::Tensor;

pub const TOY_CLASSES: usize = 10;
pub const TOY_CLASS_NAMES: [&str; TOY_CLASSES] = [
    "disk", "square", "triangle", "ring", "cross", "h-stripes", "v-stripes", "checker", "dots", "diagonal",
];

/// Labelled RGB images, each stored as `[1, 3, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let items: Vec<Tensor> = indices.iter().map(|&i| self.images[i].clone()).collect();
        Tensor::stack_batch(&items)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Loads a `path,label` manifest; paths are relative to the manifest.
    pub fn from_manifest(manifest: impl AsRef<Path>) -> Result<Dataset> {
        let manifest = manifest.as_ref();
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = fs::read_to_string(manifest)?;
        let mut out = Dataset::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (path, label) = line
                .rsplit_once(',')
                .ok_or_else(|| RdcError::Config(format!("manifest line {}: expected path,label", i + 1)))?;
            let label: usize = label
                .trim()
                .parse()
                .map_err(|_| RdcError::Config(format!("manifest line {}: bad label `{label}`", i + 1)))?;
            out.images.push(load_image(root.join(path.trim()))?);
            out.labels.push(label);
            out.classes = out.classes.max(label + 1);
        }
        Ok(out)
    }

    /// Writes every image as PNG next to a `manifest.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (i, (img, label)) in self.images.iter().zip(&self.labels).enumerate() {
            let name = format!("{i:05}.png");
            save_image(img, dir.join(&name))?;
            manifest.push_str(&format!("{name},{label}\n"));
        }
        let path = dir.join("manifest.csv");
        fs::write(&path, manifest)?;
        Ok(path)
    }
}

/// Seeded sampler yielding batches from successive shuffled epochs.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    len: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        assert!(len > 0, "cannot sample from an empty dataset");
        Self {
            len,
            order: Vec::new(),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order = (0..self.len).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Reads an 8-bit image into `[1, 3, H, W]` scaled by 1/255.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = p[c] as f64 / 255.0;
        }
    }
    Ok(Tensor::new(&[1, 3, h, w], data))
}

/// Writes the first image of a `[B, 3, H, W]` tensor as an 8-bit PNG,
/// clipping to `[0, 1]` and rounding.
pub fn save_image(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let (_, c, h, w) = img.dims4();
    if c != 3 {
        return Err(RdcError::Config(format!("expected 3 channels, got {c}")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        for ch in 0..3 {
            let v = img.data()[ch * h * w + y as usize * w + x as usize];
            p[ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    buf.save(path)?;
    Ok(())
}

/// Procedural ten-class set of `size`×`size` images; label `i % 10`.
pub fn toy_dataset(count: usize, size: usize, seed: u64) -> Dataset {
    let images = (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
            render(i % TOY_CLASSES, size, &mut rng)
        })
        .collect();
    Dataset {
        images,
        labels: (0..count).map(|i| i % TOY_CLASSES).collect(),
        classes: TOY_CLASSES,
    }
}

fn random_colour(rng: &mut ChaCha8Rng, bright: bool) -> [f64; 3] {
    let base = if bright { 0.6 } else { 0.05 };
    [0; 3].map(|_| base + rng.gen_range(0.0..0.35))
}

fn render(class: usize, size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let s = size as f64;
    let bright_fg = rng.gen_bool(0.5);
    let (bg0, bg1) = (random_colour(rng, !bright_fg), random_colour(rng, !bright_fg));
    let fg = random_colour(rng, bright_fg);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let cx = s * rng.gen_range(0.35..0.65);
    let cy = s * rng.gen_range(0.35..0.65);
    let r = s * rng.gen_range(0.18..0.3);
    let rot: f64 = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
    let period = rng.gen_range(10.0..18.0) * s / 64.0;
    let phase: f64 = rng.gen_range(0.0..period);

    // Signed distance (negative inside) for shapes; coverage for textures.
    let coverage = |px: f64, py: f64| -> f64 {
        let (x, y) = (px - cx, py - cy);
        let (u, v) = (x * rot.cos() + y * rot.sin(), -x * rot.sin() + y * rot.cos());
        let soft = |d: f64| (0.5 - d).clamp(0.0, 1.0);
        let stripe = |t: f64| if ((t + phase) / period).rem_euclid(1.0) < 0.5 { 1.0 } else { 0.0 };
        match class {
            0 => soft((x * x + y * y).sqrt() - r),
            1 => soft(u.abs().max(v.abs()) - r * 0.85),
            2 => {
                let mut d = f64::NEG_INFINITY;
                for k in 0..3 {
                    let a = rot + k as f64 * std::f64::consts::TAU / 3.0;
                    d = d.max(x * a.cos() + y * a.sin() - r * 0.5);
                }
                soft(d)
            }
            3 => soft(((x * x + y * y).sqrt() - r).abs() - r * 0.25),
            4 => soft((u.abs().max(v.abs() * 4.0).min(v.abs().max(u.abs() * 4.0))) - r),
            5 => stripe(py),
            6 => stripe(px),
            7 => {
                let a = stripe(px);
                let b = stripe(py);
                if a == b {
                    1.0
                } else {
                    0.0
                }
            }
            8 => {
                let fx = (px + phase).rem_euclid(period) - period / 2.0;
                let fy = (py + phase).rem_euclid(period) - period / 2.0;
                soft((fx * fx + fy * fy).sqrt() - period * 0.25)
            }
            _ => stripe((px + py) * std::f64::consts::FRAC_1_SQRT_2),
        }
    };

    let mut data = vec![0.0; 3 * size * size];
    for yy in 0..size {
        for xx in 0..size {
            let (px, py) = (xx as f64 + 0.5, yy as f64 + 0.5);
            let t = (((px - s / 2.0) * dx + (py - s / 2.0) * dy) / s + 0.5).clamp(0.0, 1.0);
            let a = coverage(px, py);
            for c in 0..3 {
                let bg = bg0[c] * (1.0 - t) + bg1[c] * t;
                data[c * size * size + yy * size + xx] = bg * (1.0 - a) + fg[c] * a;
            }
        }
    }
    Tensor::new(&[1, 3, size, size], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_set_is_balanced_and_in_range() {
        let d = toy_dataset(40, 32, 7);
        assert_eq!(d.len(), 40);
        for c in 0..TOY_CLASSES {
            assert_eq!(d.labels.iter().filter(|&&l| l == c).count(), 4);
        }
        for img in &d.images {
            assert_eq!(img.shape(), &[1, 3, 32, 32]);
            assert!(img.min() >= 0.0 && img.max() <= 1.0);
        }
    }

    #[test]
    fn toy_set_is_seeded() {
        let (a, b) = (toy_dataset(5, 16, 1), toy_dataset(5, 16, 1));
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.data(), y.data());
        }
        assert_ne!(toy_dataset(1, 16, 2).images[0].data(), a.images[0].data());
    }

    #[test]
    fn sampler_visits_each_index_once_per_epoch() {
        let mut s = BatchSampler::new(7, 3);
        let mut seen: Vec<usize> = s.next_batch(7);
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        let mut t = BatchSampler::new(7, 3);
        t.next_batch(7);
        assert_eq!(s.next_batch(4), t.next_batch(4));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = toy_dataset(6, 16, 3);
        let manifest = d.write(dir.path()).unwrap();
        let back = Dataset::from_manifest(&manifest).unwrap();
        assert_eq!(back.labels, d.labels);
        for (x, y) in back.images.iter().zip(&d.images) {
            for (a, b) in x.data().iter().zip(y.data()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
