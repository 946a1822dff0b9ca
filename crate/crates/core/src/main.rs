fn main() -> std::process::ExitCode {
    nashmodes::cli::main()
}
