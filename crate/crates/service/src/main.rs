use std::process::ExitCode;

fn main() -> ExitCode {
    splatseg::cli::run(std::env::args_os())
}
