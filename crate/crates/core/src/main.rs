fn main() {
    std::process::exit(hybridscore::cli::main_with_args(std::env::args_os()));
}
