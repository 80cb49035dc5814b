//! L2-regularized binary linear classifier.
//!
//! Minimizes `0.5 |w|^2 + C sum_i loss(y_i (w^T x_i + b))` (bias unpenalized)
//! by full-batch gradient descent from zero. Each iteration starts from a
//! Barzilai-Borwein step and backtracks until the Armijo condition holds, so
//! the objective never increases.

use faer::linalg::matmul::matmul;
use faer::{Accum, ColMut, ColRef, Mat, MatRef, Par};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;

pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 5000;
/// Regularization grid searched by cross-validation.
pub const DEFAULT_C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    SquaredHinge,
    Logistic,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::SquaredHinge => "squared-hinge",
            LossKind::Logistic => "logistic",
        }
    }

    pub fn parse(s: &str) -> Option<LossKind> {
        match s {
            "squared-hinge" => Some(LossKind::SquaredHinge),
            "logistic" => Some(LossKind::Logistic),
            _ => None,
        }
    }

    /// Loss at margin `m = y f(x)`.
    pub fn value(self, m: f64) -> f64 {
        match self {
            LossKind::SquaredHinge => {
                let slack = (1.0 - m).max(0.0);
                slack * slack
            }
            // ln(1 + e^-m), stable for both signs
            LossKind::Logistic => {
                if m > 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative of the loss with respect to the margin.
    pub fn derivative(self, m: f64) -> f64 {
        match self {
            LossKind::SquaredHinge => -2.0 * (1.0 - m).max(0.0),
            LossKind::Logistic => {
                if m > 0.0 {
                    let e = (-m).exp();
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + m.exp())
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub loss: LossKind,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision_values(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        if x.dim() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        Ok(x.column_dots(&self.weights)
            .into_iter()
            .map(|s| s + self.bias)
            .collect())
    }
}

/// Regularized training objective over a fixed data set.
pub struct Objective<'a> {
    x: &'a DataMatrix,
    y: Vec<f64>,
    c: f64,
    loss: LossKind,
}

fn signs(labels: &[Label], n: usize, c: f64) -> Result<Vec<f64>> {
    if labels.len() != n {
        return Err(Error::Shape {
            expected: n,
            found: labels.len(),
        });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Parameter(format!("C = {c} must be positive")));
    }
    Ok(labels.iter().map(|l| l.sign()).collect())
}

impl<'a> Objective<'a> {
    pub fn new(x: &'a DataMatrix, labels: &[Label], c: f64, loss: LossKind) -> Result<Self> {
        Ok(Objective {
            x,
            y: signs(labels, x.ncols(), c)?,
            c,
            loss,
        })
    }

    fn margins(&self, w: &[f64], b: f64) -> Vec<f64> {
        self.x
            .column_dots(w)
            .into_iter()
            .zip(&self.y)
            .map(|(s, y)| y * (s + b))
            .collect()
    }

    pub fn value(&self, w: &[f64], b: f64) -> f64 {
        let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        reg + self.c
            * self
                .margins(w, b)
                .iter()
                .map(|&m| self.loss.value(m))
                .sum::<f64>()
    }

    /// Gradient with respect to `(w, b)`.
    pub fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let coeffs = loss_coeffs(&self.margins(w, b), &self.y, self.c, self.loss);
        let mut grad = w.to_vec();
        self.x.add_weighted_columns(&coeffs, &mut grad);
        (grad, coeffs.iter().sum())
    }
}

/// `C loss'(m_i) y_i`, the data term of the gradient per example.
fn loss_coeffs(margins: &[f64], y: &[f64], c: f64, loss: LossKind) -> Vec<f64> {
    margins
        .iter()
        .zip(y)
        .map(|(&m, y)| c * loss.derivative(m) * y)
        .collect()
}

/// How the weight vector is stored during descent: directly, or as
/// `w = X alpha`. Descent from zero never leaves the span of the training
/// columns, so both give the same iterates in exact arithmetic.
trait Space {
    /// `X^T w` for the represented `w`.
    fn scores(&self, v: &[f64]) -> Vec<f64>;
    /// Representation of `w + X coeffs`.
    fn add_data(&self, v: &[f64], coeffs: &[f64]) -> Vec<f64>;
    /// `<w_a, w_b>` given `scores_b = X^T w_b`.
    fn inner(&self, a: &[f64], b: &[f64], scores_b: &[f64]) -> f64;
    /// Whether `|w_g|_inf <= tol`, given `|w_g|_2^2`.
    fn small(&self, g: &[f64], norm_sq: f64, tol: f64) -> bool;
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

struct Primal<'a>(&'a DataMatrix);

impl Space for Primal<'_> {
    fn scores(&self, v: &[f64]) -> Vec<f64> {
        self.0.column_dots(v)
    }

    fn add_data(&self, v: &[f64], coeffs: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.0.add_weighted_columns(coeffs, &mut out);
        out
    }

    fn inner(&self, a: &[f64], b: &[f64], _: &[f64]) -> f64 {
        dot(a, b)
    }

    fn small(&self, g: &[f64], _: f64, tol: f64) -> bool {
        g.iter().all(|v| v.abs() <= tol)
    }
}

/// Coefficient space over a Gram matrix `K = X^T X`; `x` is only consulted
/// for the exact stopping test.
struct Dual<'a> {
    k: MatRef<'a, f64>,
    x: &'a DataMatrix,
}

impl Space for Dual<'_> {
    fn scores(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        matmul(
            ColMut::from_slice_mut(&mut out).as_mat_mut(),
            Accum::Replace,
            self.k,
            ColRef::from_slice(v).as_mat(),
            1.0,
            Par::Seq,
        );
        out
    }

    fn add_data(&self, v: &[f64], coeffs: &[f64]) -> Vec<f64> {
        v.iter().zip(coeffs).map(|(a, c)| a + c).collect()
    }

    fn inner(&self, a: &[f64], _: &[f64], scores_b: &[f64]) -> f64 {
        dot(a, scores_b)
    }

    fn small(&self, g: &[f64], norm_sq: f64, tol: f64) -> bool {
        let norm = norm_sq.max(0.0).sqrt();
        if norm <= tol {
            return true;
        }
        // |v|_inf >= |v|_2 / sqrt(dim)
        if norm > tol * (self.x.dim() as f64).sqrt() {
            return false;
        }
        let mut w = vec![0.0; self.x.dim()];
        self.x.add_weighted_columns(g, &mut w);
        w.iter().all(|v| v.abs() <= tol)
    }
}

/// Per-iteration record of a fit.
#[derive(Clone, Debug, Default)]
pub struct FitTrace {
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// State of one gradient descent run from zero. Each iteration needs
/// `X^T w_g` for the current gradient `g`, supplied by the caller so that
/// runs sharing a Gram matrix can batch that product.
struct Descent<'a> {
    y: &'a [f64],
    c: f64,
    loss: LossKind,
    v: Vec<f64>,
    scores: Vec<f64>,
    b: f64,
    f: f64,
    g: Vec<f64>,
    gb: f64,
    step: f64,
    trace: FitTrace,
    finished: bool,
}

impl<'a> Descent<'a> {
    fn new<S: Space>(space: &S, n_params: usize, y: &'a [f64], c: f64, loss: LossKind) -> Self {
        let zero = vec![0.0; y.len()];
        let f = c * zero.iter().map(|&m| loss.value(m)).sum::<f64>();
        let coeffs = loss_coeffs(&zero, y, c, loss);
        Descent {
            y,
            c,
            loss,
            g: space.add_data(&vec![0.0; n_params], &coeffs),
            gb: coeffs.iter().sum(),
            v: vec![0.0; n_params],
            scores: zero,
            b: 0.0,
            f,
            step: 1.0,
            trace: FitTrace {
                objective: vec![f],
                ..FitTrace::default()
            },
            finished: false,
        }
    }

    fn active(&self) -> bool {
        !self.finished && self.trace.iterations < MAX_ITERATIONS
    }

    fn value<S: Space>(&self, space: &S, v: &[f64], scores: &[f64], margins: &[f64]) -> f64 {
        0.5 * space.inner(v, v, scores)
            + self.c * margins.iter().map(|&m| self.loss.value(m)).sum::<f64>()
    }

    /// One iteration, given `g_scores = X^T w_g`.
    fn advance<S: Space>(&mut self, space: &S, g_scores: &[f64]) {
        let (y, gb) = (self.y, self.gb);
        let gw_sq = space.inner(&self.g, &self.g, g_scores);
        if gb.abs() <= GRADIENT_TOLERANCE && space.small(&self.g, gw_sq, GRADIENT_TOLERANCE) {
            self.trace.converged = true;
            self.finished = true;
            return;
        }
        let g_sq = gw_sq + gb * gb;
        let mut t = self.step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial_v: Vec<f64> = self.v.iter().zip(&self.g).map(|(a, d)| a - t * d).collect();
            let trial_s: Vec<f64> = self
                .scores
                .iter()
                .zip(g_scores)
                .map(|(a, d)| a - t * d)
                .collect();
            let trial_b = self.b - t * gb;
            let trial_m: Vec<f64> = trial_s
                .iter()
                .zip(y)
                .map(|(s, y)| y * (s + trial_b))
                .collect();
            let f_new = self.value(space, &trial_v, &trial_s, &trial_m);
            if f_new <= self.f - ARMIJO * t * g_sq {
                accepted = Some((trial_v, trial_s, trial_b, trial_m, f_new));
                break;
            }
            t *= 0.5;
        }
        let Some((v_new, s_new, b_new, m_new, f_new)) = accepted else {
            // no representable decrease left
            self.finished = true;
            return;
        };
        let coeffs = loss_coeffs(&m_new, y, self.c, self.loss);
        let g_new = space.add_data(&v_new, &coeffs);
        let gb_new: f64 = coeffs.iter().sum();
        // Barzilai-Borwein step from s = -t g and y = g_new - g
        let ss = t * t * g_sq;
        let sy = -t * (space.inner(&g_new, &self.g, g_scores) - gw_sq + gb * (gb_new - gb));
        self.step = if sy > 0.0 {
            (ss / sy).clamp(1e-12, 1e12)
        } else {
            t * 2.0
        };
        self.v = v_new;
        self.scores = s_new;
        self.b = b_new;
        self.f = f_new;
        self.g = g_new;
        self.gb = gb_new;
        self.trace.iterations += 1;
        self.trace.objective.push(f_new);
    }

    fn finish(self) -> (Vec<f64>, f64, FitTrace) {
        (self.v, self.b, self.trace)
    }
}

/// Gradient descent from zero; returns the weight representation and bias.
fn descend<S: Space>(
    space: &S,
    n_params: usize,
    y: &[f64],
    c: f64,
    loss: LossKind,
) -> (Vec<f64>, f64, FitTrace) {
    let mut run = Descent::new(space, n_params, y, c, loss);
    while run.active() {
        let g_scores = space.scores(&run.g);
        run.advance(space, &g_scores);
    }
    run.finish()
}

fn check_classes(labels: &[Label]) -> Result<()> {
    if labels.contains(&Label::Positive) && labels.contains(&Label::Negative) {
        Ok(())
    } else {
        Err(Error::DegenerateLabels(
            "training needs at least one example of each class".into(),
        ))
    }
}

fn finite(v: &[f64], b: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) && b.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric("classifier weights diverged".into()))
    }
}

pub fn fit(x: &DataMatrix, labels: &[Label], c: f64, loss: LossKind) -> Result<LinearModel> {
    fit_with_trace(x, labels, c, loss).map(|(m, _)| m)
}

/// Dense inputs favored by [`prefers_gram`] descend in coefficient space
/// over the Gram matrix.
pub fn fit_with_trace(
    x: &DataMatrix,
    labels: &[Label],
    c: f64,
    loss: LossKind,
) -> Result<(LinearModel, FitTrace)> {
    check_classes(labels)?;
    let y = signs(labels, x.ncols(), c)?;
    let (weights, bias, trace) = match x.as_mat_ref() {
        Some(xm) if prefers_gram(x) => {
            let k = gram(xm);
            let space = Dual { k: k.as_ref(), x };
            let (alpha, bias, trace) = descend(&space, x.ncols(), &y, c, loss);
            let mut w = vec![0.0; x.dim()];
            x.add_weighted_columns(&alpha, &mut w);
            (w, bias, trace)
        }
        _ => descend(&Primal(x), x.dim(), &y, c, loss),
    };
    finite(&weights, bias)?;
    Ok((
        LinearModel {
            weights,
            bias,
            c,
            loss,
        },
        trace,
    ))
}

/// `X^T X` for a dense column-major matrix.
pub fn gram(x: MatRef<'_, f64>) -> Mat<f64> {
    let mut k = Mat::zeros(x.ncols(), x.ncols());
    matmul(k.as_mut(), Accum::Replace, x.transpose(), x, 1.0, Par::Seq);
    k
}

/// Classifier expressed through training examples: `f(x) = sum_i alpha_i
/// x_i^T x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelModel {
    pub alpha: Vec<f64>,
    pub bias: f64,
}

impl KernelModel {
    /// Decision values from the cross-Gram `K[test, train]`.
    pub fn decision_values(&self, cross: MatRef<'_, f64>) -> Vec<f64> {
        let mut out = vec![self.bias; cross.nrows()];
        matmul(
            ColMut::from_slice_mut(&mut out).as_mat_mut(),
            Accum::Add,
            cross,
            ColRef::from_slice(&self.alpha).as_mat(),
            1.0,
            Par::Seq,
        );
        out
    }

    pub fn error_rate(&self, cross: MatRef<'_, f64>, labels: &[Label]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let wrong = self
            .decision_values(cross)
            .into_iter()
            .zip(labels)
            .filter(|&(v, &y)| Label::from_sign(v) != y)
            .count();
        wrong as f64 / labels.len() as f64
    }
}

/// Same descent as [`fit`] with a precomputed Gram matrix `k = X^T X` of
/// the training columns `x`.
pub fn fit_gram(
    k: MatRef<'_, f64>,
    x: &DataMatrix,
    labels: &[Label],
    c: f64,
    loss: LossKind,
) -> Result<(KernelModel, FitTrace)> {
    check_classes(labels)?;
    if k.nrows() != x.ncols() || k.ncols() != x.ncols() {
        return Err(Error::Shape {
            expected: x.ncols(),
            found: k.nrows(),
        });
    }
    let y = signs(labels, x.ncols(), c)?;
    let space = Dual { k, x };
    let (alpha, bias, trace) = descend(&space, x.ncols(), &y, c, loss);
    finite(&alpha, bias)?;
    Ok((KernelModel { alpha, bias }, trace))
}

/// [`fit_gram`] for every `C` in `c_grid`. The runs advance in lockstep and
/// share one product with the Gram matrix per iteration.
pub fn fit_gram_grid(
    k: MatRef<'_, f64>,
    x: &DataMatrix,
    labels: &[Label],
    c_grid: &[f64],
    loss: LossKind,
) -> Result<Vec<(KernelModel, FitTrace)>> {
    check_classes(labels)?;
    if k.nrows() != x.ncols() || k.ncols() != x.ncols() {
        return Err(Error::Shape {
            expected: x.ncols(),
            found: k.nrows(),
        });
    }
    let n = x.ncols();
    let ys = c_grid
        .iter()
        .map(|&c| signs(labels, n, c))
        .collect::<Result<Vec<_>>>()?;
    let space = Dual { k, x };
    let mut runs: Vec<Descent<'_>> = ys
        .iter()
        .zip(c_grid)
        .map(|(y, &c)| Descent::new(&space, n, y, c, loss))
        .collect();
    loop {
        let active: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].active()).collect();
        if active.is_empty() {
            break;
        }
        let directions = Mat::from_fn(n, active.len(), |i, j| runs[active[j]].g[i]);
        let mut products = Mat::zeros(n, active.len());
        matmul(
            products.as_mut(),
            Accum::Replace,
            k,
            directions.as_ref(),
            1.0,
            Par::Seq,
        );
        for (j, &r) in active.iter().enumerate() {
            runs[r].advance(&space, products.col_as_slice(j));
        }
    }
    runs.into_iter()
        .map(|run| {
            let (alpha, bias, trace) = run.finish();
            finite(&alpha, bias)?;
            Ok((KernelModel { alpha, bias }, trace))
        })
        .collect()
}

/// Whether descent over the Gram matrix is cheaper per iteration than over
/// the features: `n^2` against two passes over `d x n` dense values.
pub fn prefers_gram(x: &DataMatrix) -> bool {
    !x.is_sparse() && x.ncols() < 2 * x.dim()
}

/// `sign(w^T x + b)`, with exact zeros resolved to positive.
pub fn predict(model: &LinearModel, x: &DataMatrix) -> Result<Vec<Label>> {
    Ok(model
        .decision_values(x)?
        .into_iter()
        .map(Label::from_sign)
        .collect())
}

/// Fraction of misclassified examples.
pub fn error_rate(model: &LinearModel, x: &DataMatrix, labels: &[Label]) -> Result<f64> {
    if labels.len() != x.ncols() {
        return Err(Error::Shape {
            expected: x.ncols(),
            found: labels.len(),
        });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let wrong = predict(model, x)?
        .iter()
        .zip(labels)
        .filter(|(p, y)| p != y)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}
