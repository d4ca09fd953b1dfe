use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ntlab::cli::main_entry())
}
