fn main() {
    std::process::exit(msglmb::cli::run_command(std::env::args_os()));
}
