fn main() {
    std::process::exit(loggas_cli::run(std::env::args_os()));
}
