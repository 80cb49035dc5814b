//! Blockwise first layer for high-dimensional inputs.
//!
//! Instead of one `d x (d+1)` map, the features are split at random into
//! disjoint blocks and each block learns its own map that reconstructs only
//! the `r` most frequent features `z` from that block's corrupted inputs. The
//! layer output is `tanh` of the average block reconstruction, an
//! `r`-dimensional vector. With block size `r` the cost is about `d/r`
//! solves of size `r` instead of one of size `d`.
//!
//! Each block carries its own bias column, and the reconstruction target is
//! never corrupted: `E[P]` for block `s` is `Z [X^s; 1]^T` scaled by the
//! survival probabilities of the block's input coordinates only.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{ColumnKind, DataMatrix};
use crate::mda::{
    cross_scatter, marginalize, scatter, solve_mda, squash_tanh, transform, CorruptionSpec,
    DenoisingMap,
};

/// Random partition of the input features into contiguous blocks of a
/// seeded permutation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPlan {
    r: usize,
    seed: u64,
    permutation: Vec<usize>,
    boundaries: Vec<usize>,
}

impl BlockPlan {
    /// Rebuilds a plan from stored parts, validating coverage.
    pub fn from_parts(
        r: usize,
        seed: u64,
        permutation: Vec<usize>,
        boundaries: Vec<usize>,
    ) -> Result<Self> {
        let d = permutation.len();
        let mut seen = vec![false; d];
        for &f in &permutation {
            if f >= d || std::mem::replace(&mut seen[f], true) {
                return Err(Error::Format("block permutation is not a bijection".into()));
            }
        }
        let valid_bounds = boundaries.first() == Some(&0)
            && boundaries.last() == Some(&d)
            && boundaries.windows(2).all(|w| w[0] < w[1]);
        if !valid_bounds || (d == 0) {
            return Err(Error::Format(
                "block boundaries must strictly increase from 0 to d".into(),
            ));
        }
        if r > d {
            return Err(Error::Parameter(format!(
                "target dimension {r} exceeds input dimension {d}"
            )));
        }
        Ok(BlockPlan {
            r,
            seed,
            permutation,
            boundaries,
        })
    }

    pub fn d(&self) -> usize {
        self.permutation.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn n_blocks(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Feature indices of block `s`.
    pub fn block(&self, s: usize) -> &[usize] {
        &self.permutation[self.boundaries[s]..self.boundaries[s + 1]]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.n_blocks()).map(move |s| self.block(s))
    }
}

/// Shuffles `0..d` with a ChaCha8 stream and cuts it into `ceil(d / block_size)`
/// blocks; only the last block may be smaller.
pub fn make_plan(d: usize, r: usize, block_size: usize, seed: u64) -> Result<BlockPlan> {
    if r > d {
        return Err(Error::Parameter(format!(
            "target dimension {r} exceeds input dimension {d}"
        )));
    }
    if block_size == 0 || block_size > d {
        return Err(Error::Parameter(format!(
            "block size {block_size} must lie in 1..={d}"
        )));
    }
    let mut permutation: Vec<usize> = (0..d).collect();
    permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut boundaries: Vec<usize> = (0..d).step_by(block_size).collect();
    boundaries.push(d);
    BlockPlan::from_parts(r, seed, permutation, boundaries)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockLayer {
    plan: BlockPlan,
    targets: Vec<usize>,
    maps: Vec<DenoisingMap>,
}

impl BlockLayer {
    pub fn from_parts(
        plan: BlockPlan,
        targets: Vec<usize>,
        maps: Vec<DenoisingMap>,
    ) -> Result<Self> {
        if targets.len() != plan.r() {
            return Err(Error::Shape {
                expected: plan.r(),
                found: targets.len(),
            });
        }
        if maps.len() != plan.n_blocks() {
            return Err(Error::Shape {
                expected: plan.n_blocks(),
                found: maps.len(),
            });
        }
        for (s, map) in maps.iter().enumerate() {
            if map.d_out() != plan.r() || map.d_in() != plan.block(s).len() {
                return Err(Error::Format(format!("block map {s} has the wrong shape")));
            }
        }
        Ok(BlockLayer {
            plan,
            targets,
            maps,
        })
    }

    pub fn plan(&self) -> &BlockPlan {
        &self.plan
    }

    /// Input features reconstructed by every block, in output order.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn maps(&self) -> &[DenoisingMap] {
        &self.maps
    }

    pub fn d_in(&self) -> usize {
        self.plan.d()
    }

    pub fn d_out(&self) -> usize {
        self.plan.r()
    }

    pub fn p(&self) -> f64 {
        self.maps[0].p()
    }

    pub fn ridge(&self) -> f64 {
        self.maps[0].ridge()
    }
}

/// Trains one map per block; `targets` are the input features to reconstruct
/// (normally the `r` most frequent terms, see [`crate::corpus::Vocabulary::top`]).
pub fn train_block_layer(
    x: &DataMatrix,
    targets: &[usize],
    plan: &BlockPlan,
    spec: CorruptionSpec,
    ridge: f64,
) -> Result<BlockLayer> {
    if x.dim() != plan.d() {
        return Err(Error::Shape {
            expected: plan.d(),
            found: x.dim(),
        });
    }
    if x.ncols() == 0 {
        return Err(Error::SampleSize(
            "blockwise training needs at least one column".into(),
        ));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= x.dim()) {
        return Err(Error::Shape {
            expected: x.dim(),
            found: bad + 1,
        });
    }
    let z = x.select_rows(targets);
    let maps = (0..plan.n_blocks())
        .into_par_iter()
        .map(|s| {
            let xs = x.select_rows(plan.block(s));
            let pair = marginalize(&scatter(&xs)?, &cross_scatter(&z, &xs)?, spec);
            solve_mda(&pair, ridge)
        })
        .collect::<Result<Vec<_>>>()?;
    BlockLayer::from_parts(plan.clone(), targets.to_vec(), maps)
}

/// Average of the block reconstructions, squashed when `squash` is set.
pub fn block_forward_with(layer: &BlockLayer, x: &DataMatrix, squash: bool) -> Result<DataMatrix> {
    if x.dim() != layer.d_in() {
        return Err(Error::Shape {
            expected: layer.d_in(),
            found: x.dim(),
        });
    }
    let (r, n) = (layer.d_out(), x.ncols());
    let mut acc = vec![0.0; r * n];
    for (s, map) in layer.maps.iter().enumerate() {
        let part = transform(map, &x.select_rows(layer.plan.block(s)), false)?;
        for (a, v) in acc
            .iter_mut()
            .zip(part.dense_values().expect("transform is dense"))
        {
            *a += v;
        }
    }
    let scale = layer.maps.len() as f64;
    for v in &mut acc {
        *v /= scale;
        if squash {
            *v = squash_tanh(*v);
        }
    }
    Ok(DataMatrix::from_dense(r, n, acc)?.with_kind(ColumnKind::Hidden))
}

/// `tanh` of the average block reconstruction.
pub fn block_forward(layer: &BlockLayer, x: &DataMatrix) -> Result<DataMatrix> {
    block_forward_with(layer, x, true)
}
