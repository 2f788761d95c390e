fn main() {
    std::process::exit(golp::cli::main_from(std::env::args_os()));
}
