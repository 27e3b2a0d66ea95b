fn main() {
    std::process::exit(molcom_cli::run(std::env::args_os()));
}
