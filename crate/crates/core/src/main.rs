use std::process::ExitCode;

fn main() -> ExitCode {
    msmil::cli::main_with_args(std::env::args_os())
}
