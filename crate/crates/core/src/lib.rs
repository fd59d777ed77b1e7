// Negated comparisons such as `!(x > 0.0)` reject NaN together with
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod evalkit;
mod io;
pub mod lm;
pub mod pipeline;
pub mod postedit;
pub mod select;
pub mod synth;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data-formats.md")]
    mod data_formats {}
    #[doc = include_str!("../../../book/src/language-models.md")]
    mod language_models {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/post-editing.md")]
    mod post_editing {}
    #[doc = include_str!("../../../book/src/adaptation.md")]
    mod adaptation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
