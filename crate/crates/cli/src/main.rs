use clap::Parser;
use unlearn_runner::commands::{run, Cli};

fn main() -> anyhow::Result<()> {
    run(Cli::parse())
}
