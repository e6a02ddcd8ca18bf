fn main() {
    std::process::exit(palmlab::cli::run_cli(std::env::args_os()));
}
