fn main() {
    std::process::exit(subtype::cli::main_with_args(std::env::args_os()));
}
