fn main() {
    std::process::exit(nmcast::cli::main_with_args(std::env::args_os()));
}
