fn main() {
    nmbc_cli::init_logging();
    std::process::exit(nmbc_cli::run(std::env::args_os()));
}
