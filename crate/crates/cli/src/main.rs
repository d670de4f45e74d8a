use clap::Parser;
use slvcal_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        let report = serde_json::to_string(&e.report()).expect("error report serializes");
        eprintln!("{report}");
        std::process::exit(e.exit_code());
    }
}
