//! Greedy layer-wise stacking.
//!
//! Layer `t` is trained in closed form to denoise the previous layer's output
//! `h^(t-1)` (with `h^0` the raw input) and produces `h^t = tanh(W^t h^(t-1))`.
//! The representation handed to a classifier is `[h^0; h^1; ...; h^l]`.

use crate::error::{Error, Result};
use crate::highdim::{block_forward_with, make_plan, train_block_layer, BlockLayer};
use crate::matrix::DataMatrix;
use crate::mda::{
    expected_scatter, solve_mda, transform, CorruptionSpec, DenoisingMap, DEFAULT_RIDGE,
};

/// Nonlinearity applied to each layer's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Squash {
    Tanh,
    /// Linear stacking, no squashing.
    Identity,
}

impl Squash {
    pub fn as_str(self) -> &'static str {
        match self {
            Squash::Tanh => "tanh",
            Squash::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Squash> {
        match s {
            "tanh" => Some(Squash::Tanh),
            "identity" => Some(Squash::Identity),
            _ => None,
        }
    }

    fn is_tanh(self) -> bool {
        self == Squash::Tanh
    }
}

/// Settings for a blockwise first layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockwiseConfig {
    /// Input features reconstructed by the blocks (their count is `r`).
    pub targets: Vec<usize>,
    pub block_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackConfig {
    pub p: f64,
    /// Total layer count `l`, including a blockwise first layer if any.
    pub layers: usize,
    pub ridge: f64,
    pub squash: Squash,
    pub blockwise: Option<BlockwiseConfig>,
}

impl StackConfig {
    pub fn new(p: f64, layers: usize) -> Self {
        StackConfig {
            p,
            layers,
            ridge: DEFAULT_RIDGE,
            squash: Squash::Tanh,
            blockwise: None,
        }
    }

    pub fn ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn squash(mut self, squash: Squash) -> Self {
        self.squash = squash;
        self
    }

    pub fn blockwise(mut self, blockwise: BlockwiseConfig) -> Self {
        self.blockwise = Some(blockwise);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackModel {
    p: f64,
    ridge: f64,
    squash: Squash,
    first_block: Option<BlockLayer>,
    layers: Vec<DenoisingMap>,
}

impl StackModel {
    pub fn train(x: &DataMatrix, config: &StackConfig) -> Result<Self> {
        let spec = CorruptionSpec::new(config.p)?;
        if config.layers == 0 {
            return Err(Error::Parameter("a stack needs at least one layer".into()));
        }
        if x.ncols() == 0 {
            return Err(Error::SampleSize("cannot train on an empty matrix".into()));
        }
        let squash = config.squash.is_tanh();
        let mut remaining = config.layers;
        let mut first_block = None;
        let mut h;
        if let Some(bw) = &config.blockwise {
            let plan = make_plan(x.dim(), bw.targets.len(), bw.block_size, bw.seed)?;
            let layer = train_block_layer(x, &bw.targets, &plan, spec, config.ridge)?;
            h = block_forward_with(&layer, x, squash)?;
            first_block = Some(layer);
            remaining -= 1;
        } else {
            h = x.clone();
        }
        let mut layers = Vec::with_capacity(remaining);
        for _ in 0..remaining {
            let map = solve_mda(&expected_scatter(&h, spec)?, config.ridge)?;
            h = transform(&map, &h, squash)?;
            layers.push(map);
        }
        Ok(StackModel {
            p: config.p,
            ridge: config.ridge,
            squash: config.squash,
            first_block,
            layers,
        })
    }

    pub fn from_parts(
        p: f64,
        ridge: f64,
        squash: Squash,
        first_block: Option<BlockLayer>,
        layers: Vec<DenoisingMap>,
    ) -> Result<Self> {
        let mut dim = match &first_block {
            Some(b) => b.d_out(),
            None => match layers.first() {
                Some(m) => m.d_in(),
                None => return Err(Error::Parameter("a stack needs at least one layer".into())),
            },
        };
        for map in &layers {
            if map.d_in() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    found: map.d_in(),
                });
            }
            dim = map.d_out();
        }
        Ok(StackModel {
            p,
            ridge,
            squash,
            first_block,
            layers,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn squash(&self) -> Squash {
        self.squash
    }

    pub fn first_block(&self) -> Option<&BlockLayer> {
        self.first_block.as_ref()
    }

    /// Standard (non-blockwise) layers, in order.
    pub fn layers(&self) -> &[DenoisingMap] {
        &self.layers
    }

    /// Total layer count `l`.
    pub fn layer_count(&self) -> usize {
        self.layers.len() + usize::from(self.first_block.is_some())
    }

    pub fn input_dim(&self) -> usize {
        match &self.first_block {
            Some(b) => b.d_in(),
            None => self.layers[0].d_in(),
        }
    }

    /// Output dimension of every layer, `h^1` through `h^l`.
    pub fn layer_dims(&self) -> Vec<usize> {
        self.first_block
            .iter()
            .map(BlockLayer::d_out)
            .chain(self.layers.iter().map(DenoisingMap::d_out))
            .collect()
    }

    /// Dimension of [`StackModel::represent`]'s output.
    pub fn output_dim(&self) -> usize {
        self.input_dim() + self.layer_dims().iter().sum::<usize>()
    }

    /// The first `l` layers of this stack. Because training is greedy this
    /// equals a stack trained with `l` layers.
    pub fn truncated(&self, l: usize) -> Result<StackModel> {
        if l == 0 || l > self.layer_count() {
            return Err(Error::Parameter(format!(
                "cannot truncate a {}-layer stack to {l} layers",
                self.layer_count()
            )));
        }
        let standard = l - usize::from(self.first_block.is_some());
        Ok(StackModel {
            layers: self.layers[..standard].to_vec(),
            ..self.clone()
        })
    }

    /// Hidden outputs `h^1, ..., h^l`.
    pub fn hidden(&self, x: &DataMatrix) -> Result<Vec<DataMatrix>> {
        if x.dim() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                found: x.dim(),
            });
        }
        let squash = self.squash.is_tanh();
        let mut outputs: Vec<DataMatrix> = Vec::with_capacity(self.layer_count());
        if let Some(b) = &self.first_block {
            outputs.push(block_forward_with(b, x, squash)?);
        }
        for map in &self.layers {
            let next = transform(map, outputs.last().unwrap_or(x), squash)?;
            outputs.push(next);
        }
        Ok(outputs)
    }

    /// `[h^0; h^1; ...; h^l]` with `h^0` the unsquashed input.
    pub fn represent(&self, x: &DataMatrix) -> Result<DataMatrix> {
        let hidden = self.hidden(x)?;
        let mut parts = vec![x];
        parts.extend(hidden.iter());
        DataMatrix::vstack(&parts)
    }
}

/// Standard stack of `l` tanh layers sharing corruption probability `p`.
pub fn train_stack(x: &DataMatrix, p: f64, l: usize, ridge: f64) -> Result<StackModel> {
    StackModel::train(x, &StackConfig::new(p, l).ridge(ridge))
}

pub fn represent(model: &StackModel, x: &DataMatrix) -> Result<DataMatrix> {
    model.represent(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> DataMatrix {
        let cols = (0..12)
            .map(|j| {
                (0..5)
                    .filter(|i| (i * 7 + j * 3) % 4 != 0)
                    .map(|i| (i, ((i + 2 * j) % 5) as f64))
                    .collect()
            })
            .collect::<Vec<Vec<_>>>();
        DataMatrix::from_sparse_columns(5, cols).unwrap()
    }

    #[test]
    fn shapes() {
        let x = toy();
        let m = train_stack(&x, 0.5, 3, DEFAULT_RIDGE).unwrap();
        assert_eq!(m.layer_count(), 3);
        for layer in m.layers() {
            assert_eq!((layer.d_out(), layer.d_in() + 1), (5, 6));
        }
        assert_eq!(m.represent(&x).unwrap().dim(), 20);
        assert_eq!(
            train_stack(&x, 0.5, 1, DEFAULT_RIDGE).unwrap().output_dim(),
            10
        );
    }

    #[test]
    fn parameter_errors() {
        let x = toy();
        assert!(matches!(
            train_stack(&x, 0.5, 0, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            train_stack(&x, 1.5, 1, 0.0),
            Err(Error::Parameter(_))
        ));
        let m = train_stack(&x, 0.5, 2, DEFAULT_RIDGE).unwrap();
        assert!(m.truncated(3).is_err());
        assert!(matches!(
            m.represent(&x.select_rows(&[0, 1])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_column_maps_to_squashed_bias() {
        let x = toy();
        let m = train_stack(&x, 0.5, 1, DEFAULT_RIDGE).unwrap();
        let zero = DataMatrix::from_sparse_columns(5, vec![vec![]]).unwrap();
        let r = m.represent(&zero).unwrap();
        let bias = m.layers()[0].bias();
        for (i, b) in bias.iter().enumerate() {
            assert_eq!(r.get(i, 0), 0.0);
            assert_eq!(r.get(5 + i, 0), b.tanh());
        }
    }

    #[test]
    fn identity_squash_is_linear() {
        let x = toy();
        let m = StackModel::train(&x, &StackConfig::new(0.3, 2).squash(Squash::Identity)).unwrap();
        let h = m.hidden(&x).unwrap();
        let direct = transform(&m.layers()[0], &x, false).unwrap();
        assert_eq!(h[0], direct);
    }
}
