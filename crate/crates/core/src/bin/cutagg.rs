fn main() {
    std::process::exit(cutagg::cli::main_with_args(std::env::args_os()));
}
