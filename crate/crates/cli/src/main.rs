fn main() {
    std::process::exit(castid_cli::run(std::env::args_os()));
}
