use std::process::ExitCode;

fn main() -> ExitCode {
    gfne::cli::main()
}
