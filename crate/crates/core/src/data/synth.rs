//! Procedurally rendered glyph images with four independent factors:
//! shape, horizontal position, vertical position and scale.

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const FACTOR_NAMES: [&str; 4] = ["shape", "x_pos", "y_pos", "scale"];

/// Glyph edge length at scale index 0.
const BASE_SIZE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Glyph {
    Square,
    Cross,
    Disc,
}

impl Glyph {
    pub const ALL: [Glyph; 3] = [Glyph::Square, Glyph::Cross, Glyph::Disc];

    /// Whether cell `(row, col)` of an `s×s` box is inked. The cross is an X.
    fn covers(self, s: usize, row: usize, col: usize) -> bool {
        // Doubled coordinates relative to the box centre keep everything integral.
        let r = (2 * row) as i64 - (s as i64 - 1);
        let c = (2 * col) as i64 - (s as i64 - 1);
        match self {
            Glyph::Square => true,
            Glyph::Cross => r.abs() == c.abs(),
            Glyph::Disc => r * r + c * c <= (s * s) as i64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub side: usize,
    pub shapes: usize,
    pub x_positions: usize,
    pub y_positions: usize,
    pub scales: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            side: 16,
            shapes: 3,
            x_positions: 8,
            y_positions: 8,
            scales: 4,
        }
    }
}

impl SynthConfig {
    pub fn cardinalities(&self) -> [usize; 4] {
        [self.shapes, self.x_positions, self.y_positions, self.scales]
    }

    pub fn validate(&self) -> Result<()> {
        let cards = self.cardinalities();
        if cards.iter().any(|&c| c < 2) {
            return Err(Error::Argument(format!(
                "every factor needs at least 2 values, got {cards:?}"
            )));
        }
        if self.shapes > Glyph::ALL.len() {
            return Err(Error::Argument(format!(
                "only {} glyph shapes exist",
                Glyph::ALL.len()
            )));
        }
        let largest = BASE_SIZE + self.scales - 1;
        let reach = 1 + self.x_positions.max(self.y_positions) - 1 + largest;
        if reach > self.side {
            return Err(Error::Argument(format!(
                "glyphs reach pixel {reach} but images are {} wide",
                self.side
            )));
        }
        Ok(())
    }
}

/// The full Cartesian product of factor values and one image per combination.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorDataset {
    pub config: SynthConfig,
    pub features: Vec<f32>,
    pub factor_values: Vec<[usize; 4]>,
}

/// Draws one image: glyph box of edge `4 + scale` with top-left corner at
/// `(1 + y, 1 + x)`.
pub fn render(config: &SynthConfig, factors: [usize; 4]) -> Vec<f32> {
    let [shape, x, y, scale] = factors;
    let side = config.side;
    let s = BASE_SIZE + scale;
    let glyph = Glyph::ALL[shape];
    let mut img = vec![0.0f32; side * side];
    for row in 0..s {
        for col in 0..s {
            if glyph.covers(s, row, col) {
                img[(1 + y + row) * side + 1 + x + col] = 1.0;
            }
        }
    }
    img
}

impl FactorDataset {
    pub fn generate(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let [a, b, c, d] = config.cardinalities();
        let mut features = Vec::with_capacity(a * b * c * d * config.side * config.side);
        let mut factor_values = Vec::with_capacity(a * b * c * d);
        for shape in 0..a {
            for x in 0..b {
                for y in 0..c {
                    for scale in 0..d {
                        let f = [shape, x, y, scale];
                        features.extend(render(&config, f));
                        factor_values.push(f);
                    }
                }
            }
        }
        Ok(FactorDataset {
            config,
            features,
            factor_values,
        })
    }

    pub fn len(&self) -> usize {
        self.factor_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factor_values.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.config.side * self.config.side
    }

    pub fn cardinalities(&self) -> [usize; 4] {
        self.config.cardinalities()
    }

    /// Row index of a factor combination.
    pub fn index_of(&self, f: [usize; 4]) -> usize {
        let [_, b, c, d] = self.cardinalities();
        ((f[0] * b + f[1]) * c + f[2]) * d + f[3]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.input_dim();
        &self.features[i * d..(i + 1) * d]
    }

    /// The images labelled by one factor's value.
    pub fn labeled_by(&self, factor: usize) -> Result<LabeledDataset> {
        if factor >= 4 {
            return Err(Error::Argument(format!("factor {factor} out of range")));
        }
        let labels = self.factor_values.iter().map(|f| Some(f[factor])).collect();
        LabeledDataset::new(
            self.features.clone(),
            labels,
            self.input_dim(),
            self.cardinalities()[factor],
        )
    }
}
