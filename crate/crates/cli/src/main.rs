use clap::Parser;

fn main() -> std::process::ExitCode {
    match dmlab_cli::run(dmlab_cli::Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
