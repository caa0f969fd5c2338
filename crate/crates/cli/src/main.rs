fn main() {
    std::process::exit(rectiflow_cli::main_with_args(std::env::args_os()));
}
