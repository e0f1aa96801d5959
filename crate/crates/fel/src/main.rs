fn main() -> std::process::ExitCode {
    fel::cli::run(std::env::args_os())
}
