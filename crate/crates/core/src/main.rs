use std::process::ExitCode;

fn main() -> ExitCode {
    setnet::cli::run_from(std::env::args_os())
}
