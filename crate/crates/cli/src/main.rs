fn main() -> std::process::ExitCode {
    transferma_cli::main_entry()
}
