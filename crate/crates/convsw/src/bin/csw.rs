use std::process::ExitCode;

fn main() -> ExitCode {
    convsw::cli::run()
}
