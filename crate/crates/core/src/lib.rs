//! Single-server pliable private information retrieval when the user's side
//! information is unidentified.
//!
//! The user holds a few labelled messages from each class, without knowing
//! where they sit in the database. It wants any new message from one class,
//! and the server must learn neither which class nor which messages it holds.
//!
//! - [`field`], [`matrix`], [`mds`]: exact finite-field arithmetic and
//!   systematic MDS codes.
//! - [`model`]: instances, database layout, message stores, side information.
//! - [`protocol`]: the USI scheme, its multi-message extension and the
//!   fully-identified variant, with a versioned JSON wire format.
//! - [`analysis`]: closed-form rates.
//! - [`oracle`]: decodability tests, exhaustive code-length search and rank
//!   certificates.
//! - [`audit`]: exact and statistical privacy audits.
//! - [`harness`]: batch experiments driven by TOML.
//!
//! The guide in `book/` walks through each part with runnable examples.

pub mod analysis;
pub mod audit;
pub mod field;
pub mod harness;
pub mod matrix;
pub mod mds;
pub mod model;
pub mod oracle;
pub mod protocol;
pub mod rational;
pub mod seed;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fields-and-codes.md")]
    mod fields_and_codes {}
    #[doc = include_str!("../../../book/src/system-model.md")]
    mod system_model {}
    #[doc = include_str!("../../../book/src/usi-scheme.md")]
    mod usi_scheme {}
    #[doc = include_str!("../../../book/src/variants.md")]
    mod variants {}
    #[doc = include_str!("../../../book/src/converse.md")]
    mod converse {}
    #[doc = include_str!("../../../book/src/privacy.md")]
    mod privacy {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
