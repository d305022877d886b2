fn main() {
    std::process::exit(livmap_cli::run(std::env::args_os()));
}
