fn main() -> std::process::ExitCode {
    volcnn::cli::main()
}
