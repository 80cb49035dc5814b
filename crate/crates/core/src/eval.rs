//! Domain-adaptation metrics and model selection.
//!
//! * transfer error `e(S,T)`: trained on labeled source, scored on target;
//! * baseline in-domain error `e_b(T,T)`: raw bag-of-words classifier trained
//!   and scored within the target by 5-fold cross-validation;
//! * transfer loss `e(S,T) - e_b(T,T)` and transfer ratio `e(S,T) / e_b(T,T)`;
//! * proxy-A-distance `2 (1 - 2 eps)`, with `eps` the held-out error of a
//!   classifier separating the two domains.
//!
//! Every random choice (fold assignment, PAD split) comes from a seeded
//! ChaCha8 stream, and parallel work is merged in grid order, so results are
//! reproducible bit for bit.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use faer::Mat;

use crate::classifier::{
    error_rate, fit, fit_gram_grid, gram, prefers_gram, LossKind, DEFAULT_C_GRID,
};
use crate::corpus::{DomainDataset, Label, Vocabulary};
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::stack::{StackConfig, StackModel};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_P_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const DEFAULT_LAYER_GRID: [usize; 3] = [1, 3, 5];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub c_grid: Vec<f64>,
    pub folds: usize,
    pub fold_seed: u64,
    pub pad_seed: u64,
    pub loss: LossKind,
    /// Compute PAD before and after the representation in [`transfer_eval`].
    pub compute_pad: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            c_grid: DEFAULT_C_GRID.to_vec(),
            folds: DEFAULT_FOLDS,
            fold_seed: 0,
            pad_seed: 0,
            loss: LossKind::SquaredHinge,
            compute_pad: true,
        }
    }
}

/// Fold index of every example. Each class is shuffled with its own fresh
/// stream from `seed` and dealt round-robin, so the assignment depends only on
/// the within-class order, not on which class is called positive.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Fold(format!("need at least 2 folds, got {k}")));
    }
    let mut folds = vec![0; labels.len()];
    for class in [Label::Positive, Label::Negative] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Fold(format!(
                "{} examples of class {class:?} cannot fill {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        for (pos, &i) in members.iter().enumerate() {
            folds[i] = pos % k;
        }
    }
    Ok(folds)
}

fn fold_split(folds: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&i| folds[i] != fold)
}

fn pick(labels: &[Label], idx: &[usize]) -> Vec<Label> {
    idx.iter().map(|&i| labels[i]).collect()
}

/// Outcome of choosing `C` by cross-validation.
#[derive(Clone, Debug, PartialEq)]
pub struct CSelection {
    pub c: f64,
    /// Mean held-out error of the chosen `C`.
    pub error: f64,
    /// Mean held-out error per grid entry.
    pub errors: Vec<f64>,
}

/// Mean held-out error over the folds for every `C` in the grid; the first
/// grid entry attaining the minimum wins.
pub fn select_c(
    x: &DataMatrix,
    labels: &[Label],
    c_grid: &[f64],
    folds: &[usize],
    loss: LossKind,
) -> Result<CSelection> {
    if c_grid.is_empty() {
        return Err(Error::Parameter("empty C grid".into()));
    }
    let k = folds.iter().max().map_or(0, |m| m + 1);
    let jobs: Vec<(usize, usize)> = (0..c_grid.len())
        .flat_map(|ci| (0..k).map(move |f| (ci, f)))
        .collect();
    let splits: Vec<_> = (0..k).map(|f| fold_split(folds, f)).collect();
    let fold_errors = match x.as_mat_ref() {
        // one Gram matrix serves every fold and every C
        Some(xm) if prefers_gram(x) => {
            let full = gram(xm);
            let per_fold = splits
                .par_iter()
                .map(|(train, test)| {
                    let sub = |rows: &[usize]| {
                        Mat::from_fn(rows.len(), train.len(), |i, j| full[(rows[i], train[j])])
                    };
                    let (k_train, k_test) = (sub(train), sub(test));
                    let y_test = pick(labels, test);
                    let fits = fit_gram_grid(
                        k_train.as_ref(),
                        &x.select_columns(train),
                        &pick(labels, train),
                        c_grid,
                        loss,
                    )?;
                    Ok(fits
                        .iter()
                        .map(|(model, _)| model.error_rate(k_test.as_ref(), &y_test))
                        .collect::<Vec<f64>>())
                })
                .collect::<Result<Vec<_>>>()?;
            // reorder to C-major like the job list
            jobs.iter().map(|&(ci, f)| per_fold[f][ci]).collect()
        }
        _ => {
            let parts: Vec<_> = splits
                .iter()
                .map(|(train, test)| {
                    (
                        x.select_columns(train),
                        pick(labels, train),
                        x.select_columns(test),
                        pick(labels, test),
                    )
                })
                .collect();
            jobs.par_iter()
                .map(|&(ci, f)| {
                    let (xtr, ytr, xte, yte) = &parts[f];
                    let model = fit(xtr, ytr, c_grid[ci], loss)?;
                    error_rate(&model, xte, yte)
                })
                .collect::<Result<Vec<f64>>>()?
        }
    };
    let errors: Vec<f64> = fold_errors
        .chunks(k)
        .map(|e| e.iter().sum::<f64>() / k as f64)
        .collect();
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e < errors[best] {
            best = i;
        }
    }
    Ok(CSelection {
        c: c_grid[best],
        error: errors[best],
        errors,
    })
}

/// Feature map applied before classification.
#[derive(Clone, Copy, Debug)]
pub enum Representation<'a> {
    /// Raw bag-of-words.
    Raw,
    Stack(&'a StackModel),
}

impl Representation<'_> {
    pub fn apply(&self, x: &DataMatrix) -> Result<DataMatrix> {
        match self {
            Representation::Raw => Ok(x.clone()),
            Representation::Stack(model) => model.represent(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `source->target`.
    pub task: String,
    pub e_st: f64,
    pub e_tt_baseline: f64,
    pub transfer_loss: f64,
    /// `e_st / e_tt_baseline`; infinite when the baseline makes no errors.
    pub transfer_ratio: f64,
    pub pad_before: Option<f64>,
    pub pad_after: Option<f64>,
    /// Representation learning time only; classifier training is excluded.
    pub train_seconds: f64,
    pub c: f64,
    pub p: Option<f64>,
    pub layers: Option<usize>,
}

impl EvalReport {
    pub fn from_errors(task: impl Into<String>, e_st: f64, e_tt_baseline: f64) -> Self {
        EvalReport {
            task: task.into(),
            e_st,
            e_tt_baseline,
            transfer_loss: e_st - e_tt_baseline,
            transfer_ratio: e_st / e_tt_baseline,
            pad_before: None,
            pad_after: None,
            train_seconds: 0.0,
            c: f64::NAN,
            p: None,
            layers: None,
        }
    }

    pub const TABLE_HEADER: &'static str =
        "task\te_ST\te_TT_b\tloss\tratio\tpad_before\tpad_after\ttrain_seconds";

    pub fn table_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), |v| v.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.task,
            self.e_st,
            self.e_tt_baseline,
            self.transfer_loss,
            self.transfer_ratio,
            opt(self.pad_before),
            opt(self.pad_after),
            self.train_seconds
        )
    }

    /// `key = value` lines.
    pub fn record(&self) -> String {
        let mut out = format!(
            "task = {}\ne_st = {}\ne_tt_baseline = {}\ntransfer_loss = {}\ntransfer_ratio = {}\n",
            self.task, self.e_st, self.e_tt_baseline, self.transfer_loss, self.transfer_ratio
        );
        if let Some(v) = self.pad_before {
            out += &format!("pad_before = {v}\n");
        }
        if let Some(v) = self.pad_after {
            out += &format!("pad_after = {v}\n");
        }
        out += &format!("train_seconds = {}\nc = {}\n", self.train_seconds, self.c);
        if let Some(p) = self.p {
            out += &format!("p = {p}\n");
        }
        if let Some(l) = self.layers {
            out += &format!("layers = {l}\n");
        }
        out
    }
}

fn labeled_or_err(vocab: &Vocabulary, d: &DomainDataset) -> Result<(DataMatrix, Vec<Label>)> {
    let (x, y) = vocab.labeled_matrix(d)?;
    if !(y.contains(&Label::Positive) && y.contains(&Label::Negative)) {
        return Err(Error::DegenerateLabels(format!(
            "domain {:?} needs labeled examples of both classes",
            d.domain_id
        )));
    }
    Ok((x, y))
}

/// Transfer metrics of one source -> target task. The representation must
/// already be learned; target labels are used for scoring only.
pub fn transfer_eval(
    repr: Representation<'_>,
    vocab: &Vocabulary,
    source: &DomainDataset,
    target: &DomainDataset,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (xs_raw, ys) = labeled_or_err(vocab, source)?;
    let (xt_raw, yt) = labeled_or_err(vocab, target)?;
    let xs = repr.apply(&xs_raw)?;
    let xt = repr.apply(&xt_raw)?;

    let source_folds = stratified_folds(&ys, opts.folds, opts.fold_seed)?;
    let chosen = select_c(&xs, &ys, &opts.c_grid, &source_folds, opts.loss)?;
    let model = fit(&xs, &ys, chosen.c, opts.loss)?;
    let e_st = error_rate(&model, &xt, &yt)?;

    let target_folds = stratified_folds(&yt, opts.folds, opts.fold_seed)?;
    let baseline = select_c(&xt_raw, &yt, &opts.c_grid, &target_folds, opts.loss)?;

    let mut report = EvalReport::from_errors(
        format!("{}->{}", source.domain_id, target.domain_id),
        e_st,
        baseline.error,
    );
    report.c = chosen.c;
    if let Representation::Stack(m) = repr {
        report.p = Some(m.p());
        report.layers = Some(m.layer_count());
    }
    if opts.compute_pad {
        let a = vocab.to_matrix(std::slice::from_ref(source))?;
        let b = vocab.to_matrix(std::slice::from_ref(target))?;
        report.pad_before = Some(proxy_a_distance(&a, &b, opts)?.pad);
        if !matches!(repr, Representation::Raw) {
            report.pad_after =
                Some(proxy_a_distance(&repr.apply(&a)?, &repr.apply(&b)?, opts)?.pad);
        } else {
            report.pad_after = report.pad_before;
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PadResult {
    /// `2 (1 - 2 eps)`, not clamped.
    pub pad: f64,
    pub epsilon: f64,
    pub c: f64,
}

fn half_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n / 2);
    (idx, test)
}

/// Proxy-A-distance between two sets of columns. Each domain is split 50/50
/// with a fresh stream from `opts.pad_seed`; `C` is chosen by cross-validation
/// on the training half.
pub fn proxy_a_distance(a: &DataMatrix, b: &DataMatrix, opts: &EvalOptions) -> Result<PadResult> {
    if a.ncols() < 2 || b.ncols() < 2 {
        return Err(Error::SampleSize(
            "each domain needs at least 2 examples".into(),
        ));
    }
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (a_train, a_test) = half_split(a.ncols(), opts.pad_seed);
    let (b_train, b_test) = half_split(b.ncols(), opts.pad_seed);
    let labels = |na: usize, nb: usize| {
        let mut y = vec![Label::Positive; na];
        y.extend(std::iter::repeat_n(Label::Negative, nb));
        y
    };
    let x_train = DataMatrix::hstack(&[&a.select_columns(&a_train), &b.select_columns(&b_train)])?;
    let y_train = labels(a_train.len(), b_train.len());
    let x_test = DataMatrix::hstack(&[&a.select_columns(&a_test), &b.select_columns(&b_test)])?;
    let y_test = labels(a_test.len(), b_test.len());

    let smallest = a_train.len().min(b_train.len());
    let c = if smallest >= 2 {
        let folds = stratified_folds(&y_train, opts.folds.min(smallest), opts.fold_seed)?;
        select_c(&x_train, &y_train, &opts.c_grid, &folds, opts.loss)?.c
    } else {
        opts.c_grid[opts.c_grid.len() / 2]
    };
    let model = fit(&x_train, &y_train, c, opts.loss)?;
    let epsilon = error_rate(&model, &x_test, &y_test)?;
    Ok(PadResult {
        pad: 2.0 * (1.0 - 2.0 * epsilon),
        epsilon,
        c,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvGrid {
    pub p: Vec<f64>,
    pub layers: Vec<usize>,
}

impl Default for CvGrid {
    fn default() -> Self {
        CvGrid {
            p: DEFAULT_P_GRID.to_vec(),
            layers: DEFAULT_LAYER_GRID.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvCell {
    pub p: f64,
    pub layers: usize,
    /// Mean 5-fold error on the transformed source, at the best `C`.
    pub error: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    /// Cells in grid order: `p` outer, layers inner.
    pub cells: Vec<CvCell>,
    pub selected: CvCell,
}

impl CvResult {
    pub fn table(&self) -> String {
        let mut out = String::from("p\tlayers\tcv_error\tc\n");
        for cell in &self.cells {
            out += &format!("{}\t{}\t{}\t{}\n", cell.p, cell.layers, cell.error, cell.c);
        }
        out
    }
}

/// Picks the minimum-error cell; ties go to fewer layers, then smaller `p`.
pub fn select_cell(cells: &[CvCell]) -> Option<CvCell> {
    cells
        .iter()
        .min_by(|a, b| {
            a.error
                .total_cmp(&b.error)
                .then(a.layers.cmp(&b.layers))
                .then(a.p.total_cmp(&b.p))
        })
        .cloned()
}

/// Grid search over `(p, l)`. For each `p` one stack with the largest `l` is
/// trained on the pooled data; shallower stacks are its prefixes.
pub fn cross_validate(
    source_x: &DataMatrix,
    source_y: &[Label],
    pooled: &DataMatrix,
    grid: &CvGrid,
    base: &StackConfig,
    opts: &EvalOptions,
) -> Result<CvResult> {
    if grid.p.is_empty() || grid.layers.is_empty() {
        return Err(Error::Parameter("empty (p, l) grid".into()));
    }
    if let Some(&bad) = grid.layers.iter().find(|&&l| l == 0) {
        return Err(Error::Parameter(format!(
            "layer count {bad} must be positive"
        )));
    }
    let folds = stratified_folds(source_y, opts.folds, opts.fold_seed)?;
    let deepest = *grid.layers.iter().max().unwrap();
    let mut cells = Vec::with_capacity(grid.p.len() * grid.layers.len());
    for &p in &grid.p {
        let config = StackConfig {
            p,
            layers: deepest,
            ..base.clone()
        };
        let stack = StackModel::train(pooled, &config)?;
        let full = stack.represent(source_x)?;
        let dims = stack.layer_dims();
        for &l in &grid.layers {
            let rows = source_x.dim() + dims[..l].iter().sum::<usize>();
            let xs = full.select_rows(&(0..rows).collect::<Vec<_>>());
            let chosen = select_c(&xs, source_y, &opts.c_grid, &folds, opts.loss)?;
            cells.push(CvCell {
                p,
                layers: l,
                error: chosen.error,
                c: chosen.c,
            });
        }
    }
    let selected = select_cell(&cells).expect("grid is nonempty");
    Ok(CvResult { cells, selected })
}

/// Finds a domain by id.
pub fn find_domain<'a>(datasets: &'a [DomainDataset], id: &str) -> Result<&'a DomainDataset> {
    datasets
        .iter()
        .find(|d| d.domain_id == id)
        .ok_or_else(|| Error::Lookup(id.to_owned()))
}

/// Result of [`adapt`].
#[derive(Clone, Debug)]
pub struct Adaptation {
    pub report: EvalReport,
    pub model: StackModel,
    /// Present when `p` and `l` were chosen by cross-validation.
    pub cv: Option<CvResult>,
}

/// Full pipeline for one task: representation learned on all domains pooled
/// (labels unused), `(p, l)` taken from `config` or chosen by
/// cross-validation on the labeled source when `fixed` is `None`, then
/// [`transfer_eval`].
#[allow(clippy::too_many_arguments)]
pub fn adapt(
    datasets: &[DomainDataset],
    vocab: &Vocabulary,
    source_id: &str,
    target_id: &str,
    fixed: Option<(f64, usize)>,
    base: &StackConfig,
    grid: &CvGrid,
    opts: &EvalOptions,
) -> Result<Adaptation> {
    let source = find_domain(datasets, source_id)?;
    let target = find_domain(datasets, target_id)?;
    let pooled = vocab.to_matrix(datasets)?;
    let (cv, (p, layers)) = match fixed {
        Some(pl) => (None, pl),
        None => {
            let (xs, ys) = labeled_or_err(vocab, source)?;
            let cv = cross_validate(&xs, &ys, &pooled, grid, base, opts)?;
            let pl = (cv.selected.p, cv.selected.layers);
            (Some(cv), pl)
        }
    };
    let config = StackConfig {
        p,
        layers,
        ..base.clone()
    };
    let start = Instant::now();
    let model = StackModel::train(&pooled, &config)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let mut report = transfer_eval(Representation::Stack(&model), vocab, source, target, opts)?;
    report.train_seconds = train_seconds;
    Ok(Adaptation { report, model, cv })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(pos: usize, neg: usize) -> Vec<Label> {
        let mut y = vec![Label::Positive; pos];
        y.extend(vec![Label::Negative; neg]);
        y
    }

    #[test]
    fn folds_are_stratified_and_seeded() {
        let y = labels(12, 8);
        let f = stratified_folds(&y, 5, 3).unwrap();
        for fold in 0..5 {
            let pos = (0..20)
                .filter(|&i| f[i] == fold && y[i] == Label::Positive)
                .count();
            let neg = (0..20)
                .filter(|&i| f[i] == fold && y[i] == Label::Negative)
                .count();
            assert!((2..=3).contains(&pos), "fold {fold} pos {pos}");
            assert!((1..=2).contains(&neg), "fold {fold} neg {neg}");
        }
        assert_eq!(f, stratified_folds(&y, 5, 3).unwrap());
        assert!(matches!(
            stratified_folds(&labels(4, 9), 5, 0),
            Err(Error::Fold(_))
        ));
    }

    #[test]
    fn report_arithmetic() {
        let r = EvalReport::from_errors("a->b", 0.3, 0.2);
        assert_eq!(r.transfer_loss, 0.3 - 0.2);
        assert_eq!(r.transfer_ratio, 0.3 / 0.2);
        assert_eq!(r.table_row().split('\t').count(), 8);
        assert!(r.record().contains("transfer_ratio = "));
    }

    fn cell(p: f64, layers: usize, error: f64) -> CvCell {
        CvCell {
            p,
            layers,
            error,
            c: 1.0,
        }
    }

    #[test]
    fn cell_selection_ties() {
        assert_eq!(
            select_cell(&[cell(0.5, 1, 0.2)]).unwrap(),
            cell(0.5, 1, 0.2)
        );
        let picked =
            select_cell(&[cell(0.1, 3, 0.2), cell(0.9, 1, 0.2), cell(0.5, 1, 0.2)]).unwrap();
        assert_eq!((picked.p, picked.layers), (0.5, 1));
        let picked = select_cell(&[cell(0.1, 3, 0.1), cell(0.9, 1, 0.2)]).unwrap();
        assert_eq!((picked.p, picked.layers), (0.1, 3));
    }

    #[test]
    fn pad_needs_two_examples() {
        let one = DataMatrix::from_dense_columns(&[vec![1.0]]).unwrap();
        let two = DataMatrix::from_dense_columns(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            proxy_a_distance(&one, &two, &EvalOptions::default()),
            Err(Error::SampleSize(_))
        ));
    }

    #[test]
    fn unknown_domain() {
        assert!(matches!(find_domain(&[], "books"), Err(Error::Lookup(_))));
    }
}
