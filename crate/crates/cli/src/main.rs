fn main() -> std::process::ExitCode {
    mixsched_cli::main_with_args(std::env::args_os())
}
