fn main() {
    std::process::exit(subelliptic::cli::main_with_args(std::env::args_os()));
}
