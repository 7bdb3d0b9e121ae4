fn main() {
    std::process::exit(meg::cli::main_with_args(std::env::args_os()));
}
