fn main() {
    std::process::exit(pimflow::cli::main_with_args(std::env::args_os()));
}
