//! Diagnostics, file formats and the command-line front end for
//! [`rotpool_core`].

pub mod cli;
pub mod diagnostics;
pub mod io;
pub mod random;
