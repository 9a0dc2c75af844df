fn main() {
    std::process::exit(cnpkit::cli::main_with(std::env::args_os()));
}
