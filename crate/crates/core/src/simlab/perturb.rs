use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use super::{SimError, SimRng};
use crate::domain::Artifact;
use crate::render::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationKind {
    /// One factor drawn uniformly from `[min, max]` multiplies every value,
    /// or both image dimensions.
    Scale { min: f64, max: f64 },
    /// Independent N(0, sigma²) noise per value, or per colour channel in
    /// 0..=255 units for images.
    GaussianNoise { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    #[serde(flatten)]
    pub kind: PerturbationKind,
    #[serde(default)]
    pub seed: u64,
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidPerturbation(m));
        match self.kind {
            PerturbationKind::Scale { min, max } => {
                if !(min.is_finite() && max.is_finite()) || min < 0.0 || min > max {
                    return bad(format!("scale range [{min}, {max}] must satisfy 0 <= min <= max"));
                }
            }
            PerturbationKind::GaussianNoise { sigma } => {
                if !sigma.is_finite() || sigma < 0.0 {
                    return bad(format!("sigma {sigma} must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        matches!(self.kind, PerturbationKind::GaussianNoise { sigma } if sigma == 0.0)
    }

    fn tag(&self) -> &'static str {
        match self.kind {
            PerturbationKind::Scale { .. } => "scale",
            PerturbationKind::GaussianNoise { .. } => "noise",
        }
    }
}

/// Perturbs a numeric-series text artifact (`[1, 2.5, 3]`, `1,2,3` or
/// `1 2 3`) or a PNG file artifact. Image results are written beside the
/// source as `<stem>.<scale|noise>-<seed>.png`.
pub fn perturb_artifact(artifact: &Artifact, pc: &PerturbationConfig) -> Result<Artifact, SimError> {
    pc.validate()?;
    if pc.is_identity() {
        return Ok(artifact.clone());
    }
    let mut rng = SimRng::seed_from(pc.seed);
    match artifact {
        Artifact::Text { body } => {
            let series = Series::parse(body)?;
            let values = perturb_values(&series.values, pc, &mut rng);
            Ok(Artifact::text(series.format(&values)))
        }
        Artifact::File { path, captured, .. } => {
            let out = perturbed_path(path, pc);
            perturb_image(path, &out, pc, &mut rng)?;
            let digest = sha256_hex(&std::fs::read(&out)?);
            Ok(Artifact::File { path: out, digest, captured: captured.clone() })
        }
    }
}

fn perturb_values(values: &[f64], pc: &PerturbationConfig, rng: &mut SimRng) -> Vec<f64> {
    match pc.kind {
        PerturbationKind::Scale { min, max } => {
            let f = min + (max - min) * rng.uniform();
            values.iter().map(|v| v * f).collect()
        }
        PerturbationKind::GaussianNoise { sigma } => {
            values.iter().map(|v| v + sigma * rng.gaussian()).collect()
        }
    }
}

struct Series {
    values: Vec<f64>,
    bracketed: bool,
    commas: bool,
}

impl Series {
    fn parse(body: &str) -> Result<Self, SimError> {
        let trimmed = body.trim();
        let (inner, bracketed) = match trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            Some(inner) => (inner, true),
            None => (trimmed, false),
        };
        let commas = inner.contains(',');
        let values = inner
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| SimError::UnsupportedArtifact("text is not a numeric series".into()))?;
        if values.is_empty() {
            return Err(SimError::UnsupportedArtifact("numeric series is empty".into()));
        }
        Ok(Self { values, bracketed, commas })
    }

    fn format(&self, values: &[f64]) -> String {
        let sep = if self.commas || self.bracketed { ", " } else { " " };
        let joined = values.iter().map(f64::to_string).collect::<Vec<_>>().join(sep);
        if self.bracketed {
            format!("[{joined}]")
        } else {
            joined
        }
    }
}

fn perturbed_path(path: &Path, pc: &PerturbationConfig) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{}-{}.png", pc.tag(), pc.seed))
}

fn perturb_image(src: &Path, dst: &Path, pc: &PerturbationConfig, rng: &mut SimRng) -> Result<(), SimError> {
    let img = image::open(src).map_err(|e| SimError::UnsupportedArtifact(format!("{}: {e}", src.display())))?;
    let out = match pc.kind {
        PerturbationKind::Scale { min, max } => {
            let f = min + (max - min) * rng.uniform();
            let w = ((f64::from(img.width()) * f).round() as u32).max(1);
            let h = ((f64::from(img.height()) * f).round() as u32).max(1);
            img.resize_exact(w, h, FilterType::Triangle)
        }
        PerturbationKind::GaussianNoise { sigma } => {
            let mut rgba = img.to_rgba8();
            for px in rgba.pixels_mut() {
                for c in &mut px.0[..3] {
                    *c = (f64::from(*c) + sigma * rng.gaussian()).round().clamp(0.0, 255.0) as u8;
                }
            }
            image::DynamicImage::ImageRgba8(rgba)
        }
    };
    out.save_with_format(dst, image::ImageFormat::Png)
        .map_err(|e| SimError::Image(e.to_string()))
}
