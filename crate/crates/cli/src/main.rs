fn main() {
    std::process::exit(claimspot_cli::run(std::env::args_os()));
}
