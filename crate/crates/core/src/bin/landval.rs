fn main() {
    std::process::exit(landval::cli::main_with_args(std::env::args_os()));
}
