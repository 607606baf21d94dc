fn main() {
    std::process::exit(owhsi_cli::run(std::env::args_os().collect()));
}
