use crate::error::{Error, Result};

/// Label value marking pixels excluded from training and evaluation.
pub const IGNORE_LABEL: u8 = 255;

/// Row-major `height × width` map of class indices, with [`IGNORE_LABEL`]
/// for unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!("label map must be non-empty, got {height}x{width}")));
        }
        if labels.len() != height * width {
            return Err(Error::Dimension(format!(
                "expected {} labels for {height}x{width}, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(LabelMap {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.labels
    }

    pub fn ignored_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == IGNORE_LABEL).count()
    }

    /// Checks that every label is below `classes` or is the ignore value.
    pub fn validate(&self, classes: usize) -> Result<()> {
        for (i, &l) in self.labels.iter().enumerate() {
            if l != IGNORE_LABEL && l as usize >= classes {
                return Err(Error::Data(format!(
                    "label {l} at (row {}, col {}) is outside [0, {classes}) and not {IGNORE_LABEL}",
                    i / self.width,
                    i % self.width
                )));
            }
        }
        Ok(())
    }
}
