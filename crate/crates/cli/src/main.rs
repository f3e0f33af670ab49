use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(claid_cli::run(std::env::args_os()))
}
