fn main() {
    std::process::exit(pvass_cli::run_command(std::env::args_os()));
}
