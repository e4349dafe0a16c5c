//! Pipeline operations behind the `spontts` command line: scripted
//! conversation synthesis, the duration-frequency curve, and the
//! speaker-leakage probe.

pub mod duration;
pub mod probe;
pub mod script;
pub mod synthesis;
