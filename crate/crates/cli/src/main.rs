use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    // Let clap print help and version itself.
    if args.iter().skip(1).any(|a| a == "--help" || a == "-h" || a == "--version" || a == "-V" || a == "help") {
        use clap::Parser;
        hypomhd_cli::Cli::parse_from(args);
        return ExitCode::SUCCESS;
    }
    match hypomhd_cli::run(args) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
