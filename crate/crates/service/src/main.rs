fn main() -> std::process::ExitCode {
    hmit_service::cli::main()
}
