fn main() {
    std::process::exit(lanser_core::cli::main_with(std::env::args_os()));
}
