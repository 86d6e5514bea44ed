fn main() {
    std::process::exit(vqprofile::cli::main_with(std::env::args_os()));
}
