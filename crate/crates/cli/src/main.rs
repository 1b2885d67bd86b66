fn main() {
    std::process::exit(qarrival_cli::run_cli(std::env::args_os()));
}
