//! Runs the code blocks in `book/src` as doctests. One module per chapter
//! so a failure points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/names.md")]
pub mod names {}
#[doc = include_str!("../../../book/src/policies.md")]
pub mod policies {}
#[doc = include_str!("../../../book/src/revocation.md")]
pub mod revocation {}
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
