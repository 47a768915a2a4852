use std::process::ExitCode;

fn main() -> ExitCode {
    cemee::cli::main_from(std::env::args_os())
}
