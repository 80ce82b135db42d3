//! Value types shared across the translation stack.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Slide preparation domain of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Fs,
    Ffpe,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Fs => "fs",
            Domain::Ffpe => "ffpe",
        }
    }

    pub fn token(self) -> DomainToken {
        match self {
            Domain::Fs => DomainToken::Fs,
            Domain::Ffpe => DomainToken::Ffpe,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Case-level subtype label (three synthetic subtypes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    A,
    B,
    C,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::A, ClassLabel::B, ClassLabel::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ClassLabel::A => "A",
            ClassLabel::B => "B",
            ClassLabel::C => "C",
        };
        f.write_str(s)
    }
}

/// Text-condition stand-in for the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainToken {
    Fs,
    Ffpe,
    Null,
}

impl DomainToken {
    pub fn index(self) -> usize {
        match self {
            DomainToken::Fs => 0,
            DomainToken::Ffpe => 1,
            DomainToken::Null => 2,
        }
    }
}

/// An H×W×3 image with values in `[0, 1]`, stored row-major HWC.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    pub pixels: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub domain: Domain,
    pub class_label: ClassLabel,
    pub case_id: String,
    pub patch_id: String,
}

impl ImagePatch {
    pub fn new(
        pixels: Vec<f32>,
        height: usize,
        width: usize,
        domain: Domain,
        class_label: ClassLabel,
        case_id: impl Into<String>,
        patch_id: impl Into<String>,
    ) -> Result<Self> {
        let patch = Self {
            pixels,
            height,
            width,
            domain,
            class_label,
            case_id: case_id.into(),
            patch_id: patch_id.into(),
        };
        patch.validate()?;
        Ok(patch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.len() != self.height * self.width * 3 {
            return Err(Error::invalid(format!(
                "patch `{}` holds {} values, expected {}x{}x3",
                self.patch_id,
                self.pixels.len(),
                self.height,
                self.width
            )));
        }
        if let Some(v) = self.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("patch `{}` has pixel value {v} outside [0,1]", self.patch_id)));
        }
        Ok(())
    }

    /// Copies this patch's metadata onto new pixel content of the same size.
    pub fn with_pixels(&self, pixels: Vec<f32>) -> Self {
        Self { pixels, ..self.clone() }
    }

    pub fn mean_luminance(&self) -> f32 {
        self.pixels.iter().sum::<f32>() / self.pixels.len() as f32
    }
}

/// Spatial latent `h×w×c` at a diffusion timestep (0 is clean).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid<T> {
    pub values: Vec<T>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub timestep: usize,
}

impl<T: Scalar> LatentGrid<T> {
    pub fn new(values: Vec<T>, height: usize, width: usize, channels: usize, timestep: usize) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "latent holds {} values, expected {height}x{width}x{channels}",
                values.len()
            )));
        }
        Ok(Self { values, height, width, channels, timestep })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> T {
        l2_norm(&self.values)
    }

    pub fn with_values(&self, values: Vec<T>, timestep: usize) -> Self {
        Self { values, height: self.height, width: self.width, channels: self.channels, timestep }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Fixed-dimension feature vector from an extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T>(pub Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("embedding has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn norm(&self) -> T {
        l2_norm(&self.0)
    }
}

/// Everything the denoiser is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle<T> {
    pub token: DomainToken,
    pub embedding: Option<EmbeddingVector<T>>,
}

impl<T: Scalar> ConditionBundle<T> {
    pub fn new(token: DomainToken, embedding: Option<EmbeddingVector<T>>) -> Self {
        Self { token, embedding }
    }

    /// The same embedding under the NULL token: the unconditional branch of guidance.
    pub fn nulled(&self) -> Self {
        Self { token: DomainToken::Null, embedding: self.embedding.clone() }
    }
}

pub(crate) fn l2_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, x| acc + *x * *x).sqrt()
}
