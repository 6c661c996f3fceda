fn main() {
    std::process::exit(cdsa::cli::main(std::env::args_os()));
}
