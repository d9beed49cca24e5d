fn main() {
    std::process::exit(nspgrade_cli::run(std::env::args_os()));
}
