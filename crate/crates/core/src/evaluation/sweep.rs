use std::fmt::Write as _;

use crate::bitstream::{compress, decompress};
use crate::codec::CodecModel;
use crate::cognition::{fit_probe, probe_accuracy, CognitionProxy, LinearProbe, ProbeTrainConfig};
use crate::error::{RdcError, Result};
use crate::tensor::Tensor;

use super::psnr;

pub const SURFACE_HEADER: &str = "alpha,beta,alpha_s,bpp,psnr_db,probe_acc";

/// One measured operating point, averaged over a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdcPoint {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_s: Option<f64>,
    pub bpp: f64,
    pub psnr_db: f64,
    pub probe_acc: f64,
}

impl RdcPoint {
    pub fn csv(&self) -> String {
        let alpha_s = self.alpha_s.map(|a| a.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{:.6},{:.4},{:.4}",
            self.alpha, self.beta, alpha_s, self.bpp, self.psnr_db, self.probe_acc
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Corner {
    /// α = 1, β = 1.
    A,
    /// α = 1, β = 0.
    B,
    /// α = 0, β = 0.
    C,
    /// α = 0, β = 1.
    D,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::A, Corner::B, Corner::C, Corner::D];

    pub fn coordinates(self) -> (f64, f64) {
        match self {
            Corner::A => (1.0, 1.0),
            Corner::B => (1.0, 0.0),
            Corner::C => (0.0, 0.0),
            Corner::D => (0.0, 1.0),
        }
    }
}

/// Grid of points over α × β, α-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TradeoffSurface {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub points: Vec<RdcPoint>,
}

impl TradeoffSurface {
    pub fn at(&self, alpha: f64, beta: f64) -> Option<&RdcPoint> {
        self.points.iter().find(|p| p.alpha == alpha && p.beta == beta)
    }

    pub fn corner(&self, corner: Corner) -> Option<&RdcPoint> {
        let (a, b) = corner.coordinates();
        self.at(a, b)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SURFACE_HEADER);
        out.push('\n');
        for p in &self.points {
            let _ = writeln!(out, "{}", p.csv());
        }
        out
    }
}

pub struct SweepInputs<'a> {
    pub model: &'a CodecModel,
    pub proxy: &'a CognitionProxy,
    pub probe: &'a LinearProbe,
    pub images: &'a [Tensor],
    pub labels: &'a [usize],
}

fn in_cell(alpha: f64, beta: f64) -> impl Fn(RdcError) -> RdcError {
    move |e| RdcError::Cell {
        alpha,
        beta,
        source: Box::new(e),
    }
}

/// Compresses every image once per α and decodes it at every β; rates come
/// from the real container sizes.
pub fn sweep_surface(inputs: &SweepInputs<'_>, alphas: &[f64], betas: &[f64], alpha_s: Option<f64>) -> Result<TradeoffSurface> {
    if inputs.images.is_empty() {
        return Err(RdcError::Config("sweep needs at least one image".into()));
    }
    let mut points = Vec::with_capacity(alphas.len() * betas.len());
    for &alpha in alphas {
        let streams = inputs
            .images
            .iter()
            .map(|x| compress(inputs.model, x, alpha, alpha_s))
            .collect::<Result<Vec<_>>>()
            .map_err(in_cell(alpha, f64::NAN))?;
        let bpp = streams.iter().map(|s| s.bpp()).sum::<f64>() / streams.len() as f64;
        for &beta in betas {
            let err = in_cell(alpha, beta);
            let mut decoded = Vec::with_capacity(streams.len());
            let mut total_psnr = 0.0;
            for (s, x) in streams.iter().zip(inputs.images) {
                let d = decompress(inputs.model, &s.bytes, beta).map_err(&err)?;
                total_psnr += psnr(x, &d.image);
                decoded.push(d.image);
            }
            let probe_acc = probe_accuracy(inputs.proxy, inputs.probe, &decoded, inputs.labels).map_err(&err)?;
            points.push(RdcPoint {
                alpha,
                beta,
                alpha_s,
                bpp,
                psnr_db: total_psnr / decoded.len() as f64,
                probe_acc,
            });
        }
    }
    Ok(TradeoffSurface {
        alphas: alphas.to_vec(),
        betas: betas.to_vec(),
        points,
    })
}

/// Fits a probe on cognition-oriented (β = 1) reconstructions of `images`
/// at every α in `alphas`.
pub fn finetune_probe(
    model: &CodecModel,
    proxy: &CognitionProxy,
    images: &[Tensor],
    labels: &[usize],
    classes: usize,
    alphas: &[f64],
    cfg: ProbeTrainConfig,
) -> Result<LinearProbe> {
    if images.len() != labels.len() || images.is_empty() || alphas.is_empty() {
        return Err(RdcError::Config("fine-tuning needs images, matching labels and an α grid".into()));
    }
    let mut decoded = Vec::with_capacity(images.len() * alphas.len());
    let mut targets = Vec::with_capacity(decoded.capacity());
    for &alpha in alphas {
        for (x, &label) in images.iter().zip(labels) {
            let stream = compress(model, x, alpha, None).map_err(in_cell(alpha, 1.0))?;
            decoded.push(decompress(model, &stream.bytes, 1.0).map_err(in_cell(alpha, 1.0))?.image);
            targets.push(label);
        }
    }
    fit_probe(proxy, &decoded, &targets, classes, cfg)
}
