fn main() -> std::process::ExitCode {
    modelrisk::cli::main()
}
