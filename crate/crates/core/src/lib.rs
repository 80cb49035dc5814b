//! Marginalized stacked denoising features for domain adaptation of
//! bag-of-words classifiers. See the guide in `book/` for a walkthrough.

pub mod classifier;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod format;
pub mod highdim;
pub mod matrix;
pub mod mda;
pub mod stack;
pub mod synthetic;

// The guide's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corruption.md")]
    mod corruption {}
    #[doc = include_str!("../../../book/src/stacking.md")]
    mod stacking {}
    #[doc = include_str!("../../../book/src/blocks.md")]
    mod blocks {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
