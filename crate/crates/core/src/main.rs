fn main() {
    std::process::exit(freebound::cli::main_with_args(std::env::args_os()));
}
