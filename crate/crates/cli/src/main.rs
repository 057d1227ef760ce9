fn main() {
    std::process::exit(occbound_cli::run(std::env::args_os()));
}
