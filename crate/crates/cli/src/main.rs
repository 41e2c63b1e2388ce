fn main() {
    std::process::exit(otmm_cli::run(std::env::args_os()));
}
