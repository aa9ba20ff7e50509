use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(satforge::cli::run(std::env::args_os()))
}
