fn main() {
    std::process::exit(tvqe::cli::main_with_args(std::env::args_os()));
}
