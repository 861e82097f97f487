fn main() {
    std::process::exit(dlps::cli::main_with_args(std::env::args_os()));
}
