fn main() {
    std::process::exit(gos_cli::run(std::env::args_os()));
}
