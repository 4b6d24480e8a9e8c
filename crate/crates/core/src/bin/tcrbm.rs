use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(tcrbm::cli::run(std::env::args()) as u8)
}
