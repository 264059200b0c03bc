use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which parts of the full semi-supervised network are present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Encoder, latent heads, class head and decoder.
    SemiSupervised,
    /// Encoder and class head only; trained on the classification loss.
    Supervised,
    /// Plain VAE: no class head.
    Unsupervised,
}

impl Variant {
    pub fn code(self) -> &'static str {
        match self {
            Variant::SemiSupervised => "SS",
            Variant::Supervised => "ES",
            Variant::Unsupervised => "EU",
        }
    }

    pub fn has_class_head(self) -> bool {
        self != Variant::Unsupervised
    }

    pub fn has_latent(self) -> bool {
        self != Variant::Supervised
    }

    pub fn has_decoder(self) -> bool {
        self != Variant::Supervised
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SS" => Ok(Variant::SemiSupervised),
            "ES" => Ok(Variant::Supervised),
            "EU" => Ok(Variant::Unsupervised),
            other => Err(Error::Argument(format!(
                "unknown variant {other:?} (expected SS, ES or EU)"
            ))),
        }
    }
}

/// Shape of a dense model. Parameter shapes follow from it entirely.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub variant: Variant,
    pub input_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub decoder_widths: Vec<usize>,
    /// Whether the class probabilities are concatenated into the decoder input.
    pub pi_to_decoder: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            variant: Variant::SemiSupervised,
            input_dim: 784,
            encoder_widths: vec![1024, 1024],
            latent_dim: 2,
            num_classes: 10,
            decoder_widths: vec![1024, 1024],
            pi_to_decoder: true,
        }
    }
}

impl ModelSpec {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Same hidden width for every encoder and decoder layer.
    pub fn with_hidden_width(mut self, width: usize) -> Self {
        self.encoder_widths.iter_mut().for_each(|w| *w = width);
        self.decoder_widths.iter_mut().for_each(|w| *w = width);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let widths_ok = self
            .encoder_widths
            .iter()
            .chain(&self.decoder_widths)
            .all(|&w| w > 0);
        if !widths_ok || self.input_dim == 0 || self.latent_dim == 0 || self.num_classes == 0 {
            return Err(Error::Argument(format!("all extents must be positive: {self:?}")));
        }
        if self.encoder_widths.is_empty() {
            return Err(Error::Argument("encoder needs at least one hidden layer".into()));
        }
        Ok(())
    }

    /// Whether the decoder sees the class probabilities.
    pub fn decoder_takes_pi(&self) -> bool {
        self.variant == Variant::SemiSupervised && self.pi_to_decoder
    }

    pub fn decoder_input_dim(&self) -> usize {
        self.latent_dim
            + if self.decoder_takes_pi() {
                self.num_classes
            } else {
                0
            }
    }

    /// Names and shapes of all parameters in declared order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut layout = Vec::new();
        let mut dense = |name: String, fan_in: usize, fan_out: usize| {
            layout.push((format!("{name}.weight"), vec![fan_in, fan_out]));
            layout.push((format!("{name}.bias"), vec![fan_out]));
        };
        let mut width = self.input_dim;
        for (i, &w) in self.encoder_widths.iter().enumerate() {
            dense(format!("encoder.{i}"), width, w);
            width = w;
        }
        let top = width;
        if self.variant.has_latent() {
            dense("mu".into(), top, self.latent_dim);
            dense("log_var".into(), top, self.latent_dim);
        }
        if self.variant.has_class_head() {
            dense("pi".into(), top, self.num_classes);
        }
        if self.variant.has_decoder() {
            let mut width = self.decoder_input_dim();
            for (i, &w) in self.decoder_widths.iter().enumerate() {
                dense(format!("decoder.{i}"), width, w);
                width = w;
            }
            dense("output".into(), width, self.input_dim);
        }
        layout
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}
