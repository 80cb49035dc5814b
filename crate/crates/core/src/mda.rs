//! Single-layer marginalized denoising autoencoder.
//!
//! A layer is a linear map `W : R^(d+1) -> R^d` (the last input coordinate is
//! the constant bias feature) trained to reconstruct inputs from copies in
//! which each real feature is zeroed independently with probability `p`.
//! Rather than materializing corrupted copies, the expected normal-equation
//! matrices are formed directly from the bias-augmented scatter
//! `S = [X;1][X;1]^T` and the survival vector `q = (1-p, ..., 1-p, 1)`:
//!
//! ```text
//! E[Q]_ab = S_ab q_a q_b   (a != b)      E[P]_ab = S_ab q_b
//! E[Q]_aa = S_aa q_a
//! ```
//!
//! and `W` solves `W (E[Q] + ridge I) = E[P]` through a Cholesky factorization.
//!
//! [`mda_enumerate`] and [`mda_monte_carlo`] compute the same map the slow way
//! (exact expectation over all corruption masks, and explicit sampling). They
//! exist to check the closed form.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::{Llt, PartialPivLu, Solve};
use faer::{get_global_parallelism, Accum, Mat, MatRef, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{Column, ColumnKind, DataMatrix};

/// Ridge added to `E[Q]` unless the caller asks otherwise.
pub const DEFAULT_RIDGE: f64 = 1e-5;

/// Largest input dimension [`mda_enumerate`] accepts (2^d masks).
pub const MAX_ENUMERATION_DIM: usize = 20;

/// Feature-dropout corruption: each real feature is zeroed with probability `p`.
/// The bias feature is never corrupted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorruptionSpec {
    p: f64,
}

impl CorruptionSpec {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "corruption probability {p} outside [0, 1]"
            )));
        }
        Ok(CorruptionSpec { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Survival vector of length `d + 1`; the last entry (bias) is exactly 1.
    pub fn survival(&self, d: usize) -> Vec<f64> {
        let mut q = vec![1.0 - self.p; d + 1];
        q[d] = 1.0;
        q
    }
}

/// Expected normal-equation matrices of one layer.
#[derive(Clone, Debug)]
pub struct ScatterPair {
    /// `E[Q]`, symmetric `(d_in+1) x (d_in+1)`.
    pub eq: Mat<f64>,
    /// `E[P]`, `d_out x (d_in+1)`.
    pub ep: Mat<f64>,
    pub p: f64,
}

impl ScatterPair {
    pub fn d_in(&self) -> usize {
        self.eq.nrows() - 1
    }

    pub fn d_out(&self) -> usize {
        self.ep.nrows()
    }
}

/// Learned weights of one layer: `d_out x (d_in + 1)`, bias in the last column.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoisingMap {
    weights: Mat<f64>,
    p: f64,
    ridge: f64,
}

impl DenoisingMap {
    pub fn from_weights(weights: Mat<f64>, p: f64, ridge: f64) -> Result<Self> {
        if weights.ncols() == 0 {
            return Err(Error::Shape {
                expected: 1,
                found: 0,
            });
        }
        for j in 0..weights.ncols() {
            for i in 0..weights.nrows() {
                let value = weights[(i, j)];
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        feature: i,
                        column: j,
                        value,
                    });
                }
            }
        }
        Ok(DenoisingMap { weights, p, ridge })
    }

    pub fn weights(&self) -> MatRef<'_, f64> {
        self.weights.as_ref()
    }

    pub fn d_in(&self) -> usize {
        self.weights.ncols() - 1
    }

    pub fn d_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn bias(&self) -> Vec<f64> {
        self.weights.col_as_slice(self.d_in()).to_vec()
    }

    /// `W [x; 1]` for one dense input vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.d_in());
        let mut out = self.bias();
        for (k, &v) in x.iter().enumerate() {
            if v != 0.0 {
                axpy(&mut out, v, self.weights.col_as_slice(k));
            }
        }
        out
    }
}

/// Largest `f64` strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// `tanh` kept strictly inside `(-1, 1)`; plain `tanh` rounds to `±1.0` once
/// `|v|` exceeds about 19.
pub fn squash_tanh(v: f64) -> f64 {
    v.tanh().clamp(-BELOW_ONE, BELOW_ONE)
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn ensure_finite(m: &Mat<f64>, what: &str) -> Result<()> {
    for j in 0..m.ncols() {
        if m.col_as_slice(j).iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("{what} contains non-finite values")));
        }
    }
    Ok(())
}

/// Bias-augmented scatter `[X;1][X;1]^T`, computed in one pass over the columns.
pub fn scatter(x: &DataMatrix) -> Result<Mat<f64>> {
    let d = x.dim();
    let mut s = Mat::<f64>::zeros(d + 1, d + 1);
    if let Some(dense) = x.as_mat_ref() {
        matmul(
            s.as_mut().submatrix_mut(0, 0, d, d),
            Accum::Replace,
            dense,
            dense.transpose(),
            1.0,
            get_global_parallelism(),
        );
        for (a, total) in x.row_sums().into_iter().enumerate() {
            s[(a, d)] = total;
        }
    } else {
        for col in x.columns() {
            let Column::Sparse { rows, values } = col else {
                unreachable!("sparse storage yields sparse columns")
            };
            // upper triangle: S[a, b] for a <= b lives in column b
            for (k, (&b, &vb)) in rows.iter().zip(values).enumerate() {
                let sb = s.col_as_slice_mut(b);
                for (&a, &va) in rows[..=k].iter().zip(&values[..=k]) {
                    sb[a] += va * vb;
                }
            }
            let bias = s.col_as_slice_mut(d);
            for (&a, &va) in rows.iter().zip(values) {
                bias[a] += va;
            }
        }
    }
    s[(d, d)] = x.ncols() as f64;
    // mirror the upper triangle so the result is exactly symmetric
    for b in 0..=d {
        for a in 0..b {
            s[(b, a)] = s[(a, b)];
        }
    }
    ensure_finite(&s, "scatter matrix")?;
    Ok(s)
}

/// Cross scatter `Z [X;1]^T` between uncorrupted targets `z` (`r x n`) and
/// inputs `x` (`d x n`), shape `r x (d+1)`.
pub fn cross_scatter(z: &DataMatrix, x: &DataMatrix) -> Result<Mat<f64>> {
    if z.ncols() != x.ncols() {
        return Err(Error::Shape {
            expected: x.ncols(),
            found: z.ncols(),
        });
    }
    let (r, d) = (z.dim(), x.dim());
    let mut c = Mat::<f64>::zeros(r, d + 1);
    if z.is_sparse() && x.is_sparse() {
        for (zc, xc) in z.columns().zip(x.columns()) {
            let z_entries: Vec<(usize, f64)> = zc.entries().collect();
            if z_entries.is_empty() {
                continue;
            }
            for (b, vb) in xc.entries() {
                let cb = c.col_as_slice_mut(b);
                for &(a, va) in &z_entries {
                    cb[a] += va * vb;
                }
            }
            let bias = c.col_as_slice_mut(d);
            for &(a, va) in &z_entries {
                bias[a] += va;
            }
        }
    } else {
        let zd = z.to_dense();
        let xd = x.to_dense();
        matmul(
            c.as_mut().submatrix_mut(0, 0, r, d),
            Accum::Replace,
            zd.as_mat_ref().unwrap(),
            xd.as_mat_ref().unwrap().transpose(),
            1.0,
            get_global_parallelism(),
        );
        for (a, total) in z.row_sums().into_iter().enumerate() {
            c[(a, d)] = total;
        }
    }
    ensure_finite(&c, "cross scatter")?;
    Ok(c)
}

/// Applies the survival probabilities to a scatter `s` and cross scatter `c`.
pub fn marginalize(s: &Mat<f64>, c: &Mat<f64>, spec: CorruptionSpec) -> ScatterPair {
    let d = s.nrows() - 1;
    let q = spec.survival(d);
    let eq = Mat::from_fn(d + 1, d + 1, |a, b| {
        if a == b {
            s[(a, a)] * q[a]
        } else {
            s[(a, b)] * q[a] * q[b]
        }
    });
    let ep = Mat::from_fn(c.nrows(), d + 1, |a, b| c[(a, b)] * q[b]);
    ScatterPair {
        eq,
        ep,
        p: spec.p(),
    }
}

/// `E[Q]` and `E[P]` for reconstructing `x` from its own corruptions.
pub fn expected_scatter(x: &DataMatrix, spec: CorruptionSpec) -> Result<ScatterPair> {
    if x.ncols() == 0 {
        return Err(Error::SampleSize(
            "scatter needs at least one column".into(),
        ));
    }
    let s = scatter(x)?;
    let d = x.dim();
    let c = s.as_ref().submatrix(0, 0, d, d + 1).to_owned();
    Ok(marginalize(&s, &c, spec))
}

/// Solves `W (E[Q] + ridge I) = E[P]` by Cholesky factorization.
pub fn solve_mda(scatter: &ScatterPair, ridge: f64) -> Result<DenoisingMap> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Parameter(format!(
            "ridge {ridge} must be non-negative"
        )));
    }
    let dim = scatter.eq.nrows();
    if scatter.ep.ncols() != dim {
        return Err(Error::Shape {
            expected: dim,
            found: scatter.ep.ncols(),
        });
    }
    let mut system = scatter.eq.clone();
    for a in 0..dim {
        system[(a, a)] += ridge;
    }
    let llt = Llt::new(system.as_ref(), Side::Lower).map_err(|_| Error::Singular { ridge })?;
    if ridge == 0.0 {
        let l = llt.L();
        let max_diag = (0..dim).map(|a| system[(a, a)]).fold(0.0, f64::max);
        let min_pivot = (0..dim)
            .map(|a| l[(a, a)] * l[(a, a)])
            .fold(f64::INFINITY, f64::min);
        if min_pivot <= (dim as f64) * f64::EPSILON * max_diag {
            return Err(Error::Singular { ridge });
        }
    }
    let mut rhs = scatter.ep.transpose().to_owned();
    llt.solve_in_place(rhs.as_mut());
    let weights = rhs.transpose().to_owned();
    ensure_finite(&weights, "denoising map").map_err(|_| Error::Singular { ridge })?;
    DenoisingMap::from_weights(weights, scatter.p, ridge)
}

/// Frobenius norm of `W (E[Q] + ridge I) - E[P]` relative to `E[P]`.
pub fn relative_residual(map: &DenoisingMap, scatter: &ScatterPair) -> f64 {
    let dim = scatter.eq.nrows();
    let mut system = scatter.eq.clone();
    for a in 0..dim {
        system[(a, a)] += map.ridge;
    }
    let mut residual = scatter.ep.clone();
    matmul(
        residual.as_mut(),
        Accum::Add,
        map.weights.as_ref(),
        system.as_ref(),
        -1.0,
        get_global_parallelism(),
    );
    let denom = scatter.ep.norm_l2();
    let num = residual.norm_l2();
    if denom == 0.0 {
        num
    } else {
        num / denom
    }
}

/// Exact limit of infinitely many corrupted copies, by summing over all 2^d
/// dropout masks with weight `p^zeroed (1-p)^kept`. Solved through an LU
/// factorization, independently of [`solve_mda`].
pub fn mda_enumerate(x: &DataMatrix, spec: CorruptionSpec, ridge: f64) -> Result<DenoisingMap> {
    let d = x.dim();
    if d > MAX_ENUMERATION_DIM {
        return Err(Error::Capacity {
            dim: d,
            max: MAX_ENUMERATION_DIM,
        });
    }
    let p = spec.p();
    let weights: Vec<f64> = (0..1usize << d)
        .map(|mask| {
            let kept = mask.count_ones() as i32;
            p.powi(d as i32 - kept) * (1.0 - p).powi(kept)
        })
        .collect();
    let mut q = vec![0.0; (d + 1) * (d + 1)];
    let mut pm = vec![0.0; d * (d + 1)];
    let mut corrupted = vec![0.0; d + 1];
    for col in x.columns() {
        let mut clean = col.to_dense(d);
        clean.push(1.0);
        for (mask, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for a in 0..d {
                corrupted[a] = if mask >> a & 1 == 1 { clean[a] } else { 0.0 };
            }
            corrupted[d] = 1.0;
            for a in 0..=d {
                for b in 0..=d {
                    q[a * (d + 1) + b] += w * corrupted[a] * corrupted[b];
                }
            }
            for a in 0..d {
                for b in 0..=d {
                    pm[a * (d + 1) + b] += w * clean[a] * corrupted[b];
                }
            }
        }
    }
    let system = Mat::from_fn(d + 1, d + 1, |a, b| {
        q[a * (d + 1) + b] + if a == b { ridge } else { 0.0 }
    });
    let lu = PartialPivLu::new(system.as_ref());
    // W system = P  <=>  system^T W^T = P^T
    let mut rhs = Mat::from_fn(d + 1, d, |b, a| pm[a * (d + 1) + b]);
    lu.solve_transpose_in_place(rhs.as_mut());
    let weights = rhs.transpose().to_owned();
    ensure_finite(&weights, "enumerated map").map_err(|_| Error::Singular { ridge })?;
    DenoisingMap::from_weights(weights, p, ridge)
}

/// Explicit corruption: `passes` corrupted copies of every column, sampled
/// with a seeded ChaCha8 stream. `Q` and `P` are averaged over passes so the
/// ridge has the same scale as in [`solve_mda`].
pub fn mda_monte_carlo(
    x: &DataMatrix,
    spec: CorruptionSpec,
    passes: usize,
    seed: u64,
    ridge: f64,
) -> Result<DenoisingMap> {
    if passes == 0 {
        return Err(Error::Parameter(
            "at least one corruption pass is required".into(),
        ));
    }
    let d = x.dim();
    let p = spec.p();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean: Vec<Vec<f64>> = x
        .columns()
        .map(|c| {
            let mut v = c.to_dense(d);
            v.push(1.0);
            v
        })
        .collect();
    let mut eq = Mat::<f64>::zeros(d + 1, d + 1);
    let mut ep = Mat::<f64>::zeros(d, d + 1);
    let mut corrupted = vec![0.0; d + 1];
    for _ in 0..passes {
        for xi in &clean {
            for a in 0..d {
                let dropped = rng.random::<f64>() < p;
                corrupted[a] = if dropped { 0.0 } else { xi[a] };
            }
            corrupted[d] = 1.0;
            for b in 0..=d {
                let cb = corrupted[b];
                if cb == 0.0 {
                    continue;
                }
                for a in 0..=d {
                    eq[(a, b)] += corrupted[a] * cb;
                }
                for a in 0..d {
                    ep[(a, b)] += xi[a] * cb;
                }
            }
        }
    }
    let scale = 1.0 / passes as f64;
    let pair = ScatterPair {
        eq: Mat::from_fn(d + 1, d + 1, |a, b| eq[(a, b)] * scale),
        ep: Mat::from_fn(d, d + 1, |a, b| ep[(a, b)] * scale),
        p,
    };
    solve_mda(&pair, ridge)
}

/// `W [X; 1]`, with elementwise `tanh` when `squash` is set.
pub fn transform(map: &DenoisingMap, x: &DataMatrix, squash: bool) -> Result<DataMatrix> {
    if x.dim() != map.d_in() {
        return Err(Error::Shape {
            expected: map.d_in(),
            found: x.dim(),
        });
    }
    let (d_in, d_out, n) = (map.d_in(), map.d_out(), x.ncols());
    let bias = map.bias();
    let mut out = vec![0.0; d_out * n];
    if let Some(dense) = x.as_mat_ref() {
        let mut view = faer::MatMut::from_column_major_slice_mut(&mut out, d_out, n);
        matmul(
            view.as_mut(),
            Accum::Replace,
            map.weights.as_ref().submatrix(0, 0, d_out, d_in),
            dense,
            1.0,
            get_global_parallelism(),
        );
        out.par_chunks_mut(d_out.max(1)).for_each(|col| {
            for (o, b) in col.iter_mut().zip(&bias) {
                *o += b;
            }
        });
    } else if d_out > 0 {
        out.par_chunks_mut(d_out).enumerate().for_each(|(j, col)| {
            col.copy_from_slice(&bias);
            for (k, v) in x.column(j).entries() {
                axpy(col, v, map.weights.col_as_slice(k));
            }
        });
    }
    if squash {
        out.par_iter_mut().for_each(|v| *v = squash_tanh(*v));
    }
    Ok(DataMatrix::from_dense_unchecked(d_out, n, out).with_kind(ColumnKind::Hidden))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> DataMatrix {
        DataMatrix::from_sparse_columns(1, vec![vec![(0, 2.0)]]).unwrap()
    }

    fn mat_eq(m: MatRef<'_, f64>, rows: &[&[f64]], tol: f64) {
        assert_eq!(m.nrows(), rows.len());
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(m.ncols(), row.len());
            for (j, &v) in row.iter().enumerate() {
                assert!(
                    (m[(i, j)] - v).abs() <= tol,
                    "entry ({i},{j}) = {} expected {v}",
                    m[(i, j)]
                );
            }
        }
    }

    #[test]
    fn single_column_half_dropout() {
        let spec = CorruptionSpec::new(0.5).unwrap();
        let s = scatter(&single()).unwrap();
        mat_eq(s.as_ref(), &[&[4.0, 2.0], &[2.0, 1.0]], 0.0);
        let pair = expected_scatter(&single(), spec).unwrap();
        mat_eq(pair.eq.as_ref(), &[&[2.0, 1.0], &[1.0, 1.0]], 0.0);
        mat_eq(pair.ep.as_ref(), &[&[2.0, 2.0]], 0.0);
        let w = solve_mda(&pair, 0.0).unwrap();
        mat_eq(w.weights(), &[&[0.0, 2.0]], 1e-12);
        let e = mda_enumerate(&single(), spec, 0.0).unwrap();
        mat_eq(e.weights(), &[&[0.0, 2.0]], 1e-12);
    }

    #[test]
    fn survival_vector_keeps_bias() {
        let q = CorruptionSpec::new(0.3).unwrap().survival(3);
        assert_eq!(q, vec![0.7, 0.7, 0.7, 1.0]);
        assert!(CorruptionSpec::new(1.5).is_err());
        assert!(CorruptionSpec::new(-0.1).is_err());
    }

    fn toy() -> DataMatrix {
        DataMatrix::from_sparse_columns(
            2,
            vec![
                vec![(0, 1.0), (1, 2.0)],
                vec![(0, 3.0)],
                vec![(1, 1.0)],
                vec![(0, 2.0), (1, 2.0)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn no_corruption_keeps_scatter() {
        let x = toy();
        let s = scatter(&x).unwrap();
        let pair = expected_scatter(&x, CorruptionSpec::new(0.0).unwrap()).unwrap();
        assert_eq!(pair.eq, s);
        mat_eq(
            pair.ep.as_ref(),
            &[
                &[s[(0, 0)], s[(0, 1)], s[(0, 2)]],
                &[s[(1, 0)], s[(1, 1)], s[(1, 2)]],
            ],
            0.0,
        );
    }

    #[test]
    fn full_corruption_leaves_bias_only() {
        let x = toy();
        let pair = expected_scatter(&x, CorruptionSpec::new(1.0).unwrap()).unwrap();
        mat_eq(
            pair.eq.as_ref(),
            &[&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 0.0, 4.0]],
            0.0,
        );
        mat_eq(pair.ep.as_ref(), &[&[0.0, 0.0, 6.0], &[0.0, 0.0, 5.0]], 0.0);
        let w = solve_mda(&pair, DEFAULT_RIDGE).unwrap();
        let n = 4.0 + DEFAULT_RIDGE;
        mat_eq(
            w.weights(),
            &[&[0.0, 0.0, 6.0 / n], &[0.0, 0.0, 5.0 / n]],
            1e-12,
        );
    }

    #[test]
    fn dense_and_sparse_scatter_agree() {
        let x = toy();
        assert_eq!(scatter(&x).unwrap(), scatter(&x.to_dense()).unwrap());
        let z = x.select_rows(&[1]);
        assert_eq!(
            cross_scatter(&z, &x).unwrap(),
            cross_scatter(&z.to_dense(), &x.to_dense()).unwrap()
        );
    }

    #[test]
    fn singular_system_is_reported() {
        // one column: [x;1] has rank 1 < 2
        let pair = expected_scatter(&single(), CorruptionSpec::new(0.0).unwrap()).unwrap();
        assert!(matches!(solve_mda(&pair, 0.0), Err(Error::Singular { .. })));
        assert!(solve_mda(&pair, 1e-3).is_ok());
        assert!(matches!(solve_mda(&pair, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn enumeration_capacity() {
        let x = DataMatrix::from_sparse_columns(21, vec![vec![(0, 1.0)]]).unwrap();
        assert!(matches!(
            mda_enumerate(&x, CorruptionSpec::new(0.5).unwrap(), 0.0),
            Err(Error::Capacity { dim: 21, .. })
        ));
    }

    #[test]
    fn monte_carlo_without_corruption_is_exact() {
        let x = toy();
        let spec = CorruptionSpec::new(0.0).unwrap();
        let mc = mda_monte_carlo(&x, spec, 1, 7, DEFAULT_RIDGE).unwrap();
        let closed = solve_mda(&expected_scatter(&x, spec).unwrap(), DEFAULT_RIDGE).unwrap();
        let diff = (mc.weights() - closed.weights()).norm_l2();
        assert!(diff <= 1e-12, "diff {diff}");
        assert!(mda_monte_carlo(&x, spec, 0, 7, 0.0).is_err());
    }

    #[test]
    fn transform_cases() {
        let x = toy();
        let identity = DenoisingMap::from_weights(
            Mat::from_fn(2, 3, |i, j| if i == j { 1.0 } else { 0.0 }),
            0.0,
            0.0,
        )
        .unwrap();
        let expected = x.to_dense().with_kind(ColumnKind::Hidden);
        assert_eq!(transform(&identity, &x, false).unwrap(), expected);
        assert_eq!(
            transform(&identity, &x.to_dense(), false).unwrap(),
            expected
        );

        let bias_only =
            DenoisingMap::from_weights(Mat::from_fn(1, 2, |_, j| [0.0, 2.0][j]), 0.5, 0.0).unwrap();
        let seven = DataMatrix::from_sparse_columns(1, vec![vec![(0, 7.0)]]).unwrap();
        assert_eq!(transform(&bias_only, &seven, false).unwrap().get(0, 0), 2.0);

        let big = DenoisingMap::from_weights(Mat::from_fn(2, 3, |_, _| 50.0), 0.5, 0.0).unwrap();
        let h = transform(&big, &x, true).unwrap();
        for col in h.columns() {
            for (_, v) in col.entries() {
                assert!(v > -1.0 && v < 1.0);
            }
        }
        assert!(matches!(
            transform(&bias_only, &x, false),
            Err(Error::Shape {
                expected: 1,
                found: 2
            })
        ));
    }
}
