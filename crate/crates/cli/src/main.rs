//! `msda` command-line frontend.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use msda::corpus::{ingest, DomainDataset, TermDictionary, Vocabulary};
use msda::eval::{
    adapt, cross_validate, find_domain, proxy_a_distance, transfer_eval, CvGrid, CvResult,
    EvalReport, Representation,
};
use msda::format::{load_stack, save_stack, write_atomic};
use msda::matrix::DataMatrix;
use msda::stack::{BlockwiseConfig, StackConfig, StackModel};
use msda::synthetic::{vocabulary_shift, ShiftConfig};

use config::{Flags, ReprChoice, RunConfig, DEFAULT_R, DENSE_BUDGET};

#[derive(Parser, Debug)]
#[command(
    name = "msda",
    version,
    about = "Marginalized stacked denoising features for domain adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Build the shared vocabulary and write it to --out.
    Vocab,
    /// Learn a stack on the pooled inputs; writes --out and the vocabulary.
    Train,
    /// Map inputs through --model and write the representation to --out.
    Transform,
    /// Evaluate one --source -> --target task.
    Adapt,
    /// Proxy-A-distance between --source and --target.
    Pad,
    /// Cross-validate p and the layer count on the labeled --source.
    Cv,
    /// Write a seeded synthetic source/target pair into the --out directory.
    Synth,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = RunConfig::from_flags(cli.flags)?;
    if let Some(n) = config.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
        faer::set_global_parallelism(if n == 1 {
            faer::Par::Seq
        } else {
            faer::Par::rayon(n)
        });
    }
    match cli.command {
        Command::Vocab => cmd_vocab(&config),
        Command::Train => cmd_train(&config),
        Command::Transform => cmd_transform(&config),
        Command::Adapt => cmd_adapt(&config),
        Command::Pad => cmd_pad(&config),
        Command::Cv => cmd_cv(&config),
        Command::Synth => cmd_synth(&config),
    }
}

fn load_inputs(config: &RunConfig) -> Result<(Vec<DomainDataset>, Option<TermDictionary>)> {
    config.require_inputs()?;
    let names = config
        .terms
        .as_deref()
        .map(TermDictionary::load)
        .transpose()?;
    Ok((ingest(&config.inputs)?, names))
}

fn build_vocab(config: &RunConfig) -> Result<(Vec<DomainDataset>, Vocabulary)> {
    let (datasets, names) = load_inputs(config)?;
    let vocab = Vocabulary::build(&datasets, config.max_features, names.as_ref())?;
    Ok((datasets, vocab))
}

fn require<'a>(value: &'a Option<String>, flag: &str) -> Result<&'a str> {
    value
        .as_deref()
        .with_context(|| format!("{flag} is required"))
}

/// Stack settings for `d` input features; the first layer turns blockwise
/// above the dense budget or on request.
fn stack_config(
    config: &RunConfig,
    vocab: &Vocabulary,
    p: f64,
    layers: usize,
) -> Result<StackConfig> {
    let d = vocab.len();
    let mut sc = StackConfig::new(p, layers).ridge(config.ridge);
    if config.blockwise || d > DENSE_BUDGET {
        let r = config.r.unwrap_or(DEFAULT_R.min(d));
        if r > d {
            bail!("r = {r} exceeds the vocabulary size {d}");
        }
        let block_size = config.block_size.unwrap_or(r).min(d);
        sc = sc.blockwise(BlockwiseConfig {
            targets: vocab.top(r),
            block_size,
            seed: config.seed_plan,
        });
    }
    Ok(sc)
}

fn vocab_path(config: &RunConfig, model: &Path) -> PathBuf {
    config.vocab.clone().unwrap_or_else(|| {
        let mut s = model.as_os_str().to_owned();
        s.push(".vocab");
        PathBuf::from(s)
    })
}

fn load_model(config: &RunConfig, model: &Path) -> Result<(StackModel, Vocabulary)> {
    let names = config
        .terms
        .as_deref()
        .map(TermDictionary::load)
        .transpose()?;
    let stack = load_stack(model)?;
    let vocab = Vocabulary::load(&vocab_path(config, model), names.as_ref())?;
    if stack.input_dim() != vocab.len() {
        bail!(
            "model expects {} features but the vocabulary has {}",
            stack.input_dim(),
            vocab.len()
        );
    }
    Ok((stack, vocab))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| w.write_all(text.as_bytes()))?;
    Ok(())
}

fn cmd_vocab(config: &RunConfig) -> Result<()> {
    let out = config.require_out()?;
    let (_, vocab) = build_vocab(config)?;
    vocab.save(out)?;
    println!("terms\t{}", vocab.len());
    Ok(())
}

fn cmd_train(config: &RunConfig) -> Result<()> {
    let out = config.require_out()?;
    let (datasets, vocab) = build_vocab(config)?;
    let pooled = vocab.to_matrix(&datasets)?;
    let sc = stack_config(
        config,
        &vocab,
        config.p.unwrap_or(0.5),
        config.layers.unwrap_or(1),
    )?;
    let start = Instant::now();
    let model = StackModel::train(&pooled, &sc)?;
    let seconds = start.elapsed().as_secs_f64();
    save_stack(out, &model)?;
    vocab.save(&vocab_path(config, out))?;
    println!("features\t{}", vocab.len());
    println!("examples\t{}", pooled.ncols());
    println!("blockwise\t{}", sc.blockwise.is_some());
    println!("output_dim\t{}", model.output_dim());
    println!("train_seconds\t{seconds}");
    Ok(())
}

/// Writes `h` in the input example format with the labels of `datasets`.
/// Dense columns list every coordinate.
fn write_examples(
    w: &mut dyn Write,
    h: &DataMatrix,
    datasets: &[DomainDataset],
) -> std::io::Result<()> {
    let labels = datasets.iter().flat_map(|d| d.labels());
    for (j, label) in labels.enumerate() {
        w.write_all(match label {
            Some(msda::corpus::Label::Positive) => b"+1",
            Some(msda::corpus::Label::Negative) => b"-1",
            None => b"0",
        })?;
        for (i, v) in h.column(j).entries() {
            write!(w, " {i}:{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn cmd_transform(config: &RunConfig) -> Result<()> {
    let out = config.require_out()?;
    let model_path = config.model.as_deref().context("--model is required")?;
    let (stack, vocab) = load_model(config, model_path)?;
    config.require_inputs()?;
    let datasets = ingest(&config.inputs)?;
    let h = stack.represent(&vocab.to_matrix(&datasets)?)?;
    write_atomic(out, |w| write_examples(w, &h, &datasets))?;
    println!("examples\t{}", h.ncols());
    println!("dim\t{}", h.dim());
    Ok(())
}

fn report_header() -> String {
    format!("{}\tc\tp\tlayers", EvalReport::TABLE_HEADER)
}

fn report_row(r: &EvalReport) -> String {
    let na = |v: Option<String>| v.unwrap_or_else(|| "NA".into());
    format!(
        "{}\t{}\t{}\t{}",
        r.table_row(),
        r.c,
        na(r.p.map(|p| p.to_string())),
        na(r.layers.map(|l| l.to_string()))
    )
}

fn emit(config: &RunConfig, text: &str) -> Result<()> {
    print!("{text}");
    if let Some(path) = &config.report {
        write_text(path, text)?;
    }
    Ok(())
}

/// The grid restricted to whichever of `p` and `l` was fixed.
fn restricted_grid(config: &RunConfig) -> CvGrid {
    CvGrid {
        p: config.p.map_or_else(|| config.grid.p.clone(), |p| vec![p]),
        layers: config
            .layers
            .map_or_else(|| config.grid.layers.clone(), |l| vec![l]),
    }
}

fn cv_summary(cv: &CvResult) -> String {
    format!(
        "{}selected\tp = {}\tlayers = {}\n",
        cv.table(),
        cv.selected.p,
        cv.selected.layers
    )
}

fn cmd_adapt(config: &RunConfig) -> Result<()> {
    let source_id = require(&config.source, "--source")?;
    let target_id = require(&config.target, "--target")?;
    let choice = config.representation.unwrap_or(ReprChoice::Msda);
    let opts = config.eval_options();
    let mut rows = vec![report_header()];
    let mut notes = String::new();

    let (datasets, vocab, pretrained) = match &config.model {
        Some(path) => {
            let (stack, vocab) = load_model(config, path)?;
            config.require_inputs()?;
            (ingest(&config.inputs)?, vocab, Some(stack))
        }
        None => {
            let (d, v) = build_vocab(config)?;
            (d, v, None)
        }
    };
    let source = find_domain(&datasets, source_id)?;
    let target = find_domain(&datasets, target_id)?;

    if matches!(choice, ReprChoice::Raw | ReprChoice::Both) {
        let r = transfer_eval(Representation::Raw, &vocab, source, target, &opts)?;
        rows.push(report_row(&r));
    }
    if matches!(choice, ReprChoice::Msda | ReprChoice::Both) {
        let report = match &pretrained {
            Some(stack) => {
                transfer_eval(Representation::Stack(stack), &vocab, source, target, &opts)?
            }
            None => {
                let fixed = config.p.zip(config.layers);
                let base = stack_config(config, &vocab, 0.5, 1)?;
                let result = adapt(
                    &datasets,
                    &vocab,
                    source_id,
                    target_id,
                    fixed,
                    &base,
                    &restricted_grid(config),
                    &opts,
                )?;
                if let Some(cv) = &result.cv {
                    notes = cv_summary(cv);
                }
                result.report
            }
        };
        rows.push(report_row(&report));
    }
    if !notes.is_empty() {
        eprint!("{notes}");
    }
    emit(config, &(rows.join("\n") + "\n"))
}

fn cmd_pad(config: &RunConfig) -> Result<()> {
    let a_id = require(&config.source, "--source")?;
    let b_id = require(&config.target, "--target")?;
    let choice = config.representation.unwrap_or(ReprChoice::Both);
    let opts = config.eval_options();
    let (datasets, vocab, pretrained) = match &config.model {
        Some(path) => {
            let (stack, vocab) = load_model(config, path)?;
            config.require_inputs()?;
            (ingest(&config.inputs)?, vocab, Some(stack))
        }
        None => {
            let (d, v) = build_vocab(config)?;
            (d, v, None)
        }
    };
    let a = vocab.to_matrix(std::slice::from_ref(find_domain(&datasets, a_id)?))?;
    let b = vocab.to_matrix(std::slice::from_ref(find_domain(&datasets, b_id)?))?;
    let raw = match choice {
        ReprChoice::Raw | ReprChoice::Both => Some(proxy_a_distance(&a, &b, &opts)?.pad),
        ReprChoice::Msda => None,
    };
    let learned = match choice {
        ReprChoice::Msda | ReprChoice::Both => {
            let stack = match pretrained {
                Some(s) => s,
                None => {
                    let sc = stack_config(
                        config,
                        &vocab,
                        config.p.unwrap_or(0.5),
                        config.layers.unwrap_or(1),
                    )?;
                    StackModel::train(&vocab.to_matrix(&datasets)?, &sc)?
                }
            };
            Some(proxy_a_distance(&stack.represent(&a)?, &stack.represent(&b)?, &opts)?.pad)
        }
        ReprChoice::Raw => None,
    };
    let show = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), |v| v.to_string());
    emit(
        config,
        &format!(
            "domains\tpad_raw\tpad_msda\n{a_id}:{b_id}\t{}\t{}\n",
            show(raw),
            show(learned)
        ),
    )
}

fn cmd_cv(config: &RunConfig) -> Result<()> {
    let source_id = require(&config.source, "--source")?;
    let (datasets, vocab) = build_vocab(config)?;
    let (xs, ys) = vocab.labeled_matrix(find_domain(&datasets, source_id)?)?;
    let pooled = vocab.to_matrix(&datasets)?;
    let base = stack_config(config, &vocab, 0.5, 1)?;
    let cv = cross_validate(
        &xs,
        &ys,
        &pooled,
        &restricted_grid(config),
        &base,
        &config.eval_options(),
    )?;
    emit(config, &cv_summary(&cv))
}

fn cmd_synth(config: &RunConfig) -> Result<()> {
    let dir = config.require_out()?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let shift = ShiftConfig {
        seed: config.seed,
        ..ShiftConfig::default()
    };
    let corpus = vocabulary_shift(&shift);
    write_atomic(&dir.join("source.txt"), |w| corpus.source.write(w))?;
    write_atomic(&dir.join("target.txt"), |w| corpus.target.write(w))?;
    let terms: String = (0..shift.vocab)
        .filter_map(|id| corpus.names.name(id).map(|n| format!("{n}\t{id}\n")))
        .collect();
    write_text(&dir.join("terms.tsv"), &terms)?;
    println!("source\t{}", corpus.source.len());
    println!("target\t{}", corpus.target.len());
    Ok(())
}
