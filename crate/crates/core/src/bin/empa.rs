//! `empa` command-line tool.
fn main() -> std::process::ExitCode {
    empa_core::cli::main()
}
