use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Random square crop resized back to full size, horizontal flip and
/// colour jitter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    /// Smallest crop area as a fraction of the image.
    pub min_crop_area: f64,
    pub flip_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            min_crop_area: 0.5,
            flip_prob: 0.5,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
        }
    }
}

impl Augmentation {
    pub fn identity() -> Self {
        Self {
            min_crop_area: 1.0,
            flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
        }
    }

    /// Augments every image of a `[B, 3, H, W]` batch independently.
    pub fn apply(&self, batch: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
        let items: Vec<Tensor> = (0..batch.shape()[0])
            .map(|i| self.apply_one(&batch.batch_item(i), rng))
            .collect();
        Tensor::stack_batch(&items)
    }

    fn apply_one(&self, img: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
        let (_, c, h, w) = img.dims4();
        let area = if self.min_crop_area < 1.0 {
            rng.gen_range(self.min_crop_area..=1.0)
        } else {
            1.0
        };
        let side = area.sqrt();
        let (ch, cw) = (side * h as f64, side * w as f64);
        let oy = rng.gen_range(0.0..=(h as f64 - ch));
        let ox = rng.gen_range(0.0..=(w as f64 - cw));
        let flip = rng.gen_bool(self.flip_prob);
        let jitter = |r: &mut ChaCha8Rng, amount: f64| if amount > 0.0 { r.gen_range(-amount..=amount) } else { 0.0 };
        let brightness = jitter(rng, self.brightness);
        let contrast = 1.0 + jitter(rng, self.contrast);
        let saturation = 1.0 + jitter(rng, self.saturation);

        let src = img.data();
        let plane = h * w;
        let mut out = vec![0.0; c * plane];
        for y in 0..h {
            for x in 0..w {
                let xs = if flip { w - 1 - x } else { x };
                // Bilinear sample at the centre of the output pixel.
                let sy = (oy + (y as f64 + 0.5) * ch / h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
                let sx = (ox + (xs as f64 + 0.5) * cw / w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                for k in 0..c {
                    let p = &src[k * plane..(k + 1) * plane];
                    out[k * plane + y * w + x] = (p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx) * (1.0 - fy)
                        + (p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx) * fy;
                }
            }
        }
        if brightness != 0.0 || contrast != 1.0 || saturation != 1.0 {
            let mean = out.iter().sum::<f64>() / out.len() as f64;
            for i in 0..plane {
                let grey = (0..c).map(|k| out[k * plane + i]).sum::<f64>() / c as f64;
                for k in 0..c {
                    let v = &mut out[k * plane + i];
                    let saturated = grey + (*v - grey) * saturation;
                    *v = ((saturated - mean) * contrast + mean + brightness).clamp(0.0, 1.0);
                }
            }
        }
        Tensor::new(&[1, c, h, w], out)
    }
}
