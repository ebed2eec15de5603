fn main() -> std::process::ExitCode {
    mlsr::cli::main()
}
