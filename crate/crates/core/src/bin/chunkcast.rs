fn main() -> std::process::ExitCode {
    chunkcast::cli::main()
}
