fn main() -> std::process::ExitCode {
    hyperace::cli::run(std::env::args_os())
}
