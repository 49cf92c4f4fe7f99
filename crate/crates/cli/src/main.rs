fn main() {
    std::process::exit(wssl_cli::main_with(std::env::args_os()));
}
