fn main() {
    std::process::exit(rectiflow_cli::main_with(std::env::args_os()));
}
