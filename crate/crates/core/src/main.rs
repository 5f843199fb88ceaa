fn main() -> std::process::ExitCode {
    erfc::cli::main()
}
