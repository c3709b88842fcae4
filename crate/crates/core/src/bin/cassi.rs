fn main() {
    std::process::exit(cassi::cli::main_with_args(std::env::args_os()));
}
