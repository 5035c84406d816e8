use std::process::ExitCode;

fn main() -> ExitCode {
    rankfs::cli::main_with_args(std::env::args_os())
}
