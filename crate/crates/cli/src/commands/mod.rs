pub mod distill;
pub mod eval;
pub mod ingest;
pub mod layout;
pub mod serve;
pub mod summarize;
pub mod synth;
pub mod train_aspect;

use atlas_core::store::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

/// One line of JSON on stdout describing what a command did.
pub fn print_summary(value: &serde_json::Value) {
    println!("{value}");
}
