use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(corrkey::cli::run(std::env::args()) as u8)
}
