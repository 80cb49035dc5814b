//! Raw features against a cross-validated stack on the synthetic
//! vocabulary-shift pair. Takes a few minutes on one core:
//! `cargo run --release -p msda --example synthetic_shift`.

use std::time::Instant;

use msda::corpus::Vocabulary;
use msda::eval::{adapt, transfer_eval, CvGrid, EvalOptions, EvalReport, Representation};
use msda::stack::StackConfig;
use msda::synthetic::{vocabulary_shift, ShiftConfig};

fn main() -> msda::error::Result<()> {
    let corpus = vocabulary_shift(&ShiftConfig::default());
    let domains = [corpus.source.clone(), corpus.target.clone()];
    let vocab = Vocabulary::build(&domains, None, Some(&corpus.names))?;
    let opts = EvalOptions::default();

    let raw = transfer_eval(
        Representation::Raw,
        &vocab,
        &corpus.source,
        &corpus.target,
        &opts,
    )?;
    let start = Instant::now();
    let run = adapt(
        &domains,
        &vocab,
        "source",
        "target",
        None,
        &StackConfig::new(0.5, 1),
        &CvGrid::default(),
        &opts,
    )?;
    if let Some(cv) = &run.cv {
        print!("{}", cv.table());
    }
    println!("{}", EvalReport::TABLE_HEADER);
    println!("{}", raw.table_row());
    println!("{}", run.report.table_row());
    println!("total seconds {:.1}", start.elapsed().as_secs_f64());
    Ok(())
}
