use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(binctrl::cli::run())
}
