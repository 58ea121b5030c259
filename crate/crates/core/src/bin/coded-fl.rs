fn main() {
    std::process::exit(coded_fl::cli::run_cli(std::env::args_os()));
}
