fn main() {
    std::process::exit(tpc_cli::run(std::env::args_os()));
}
