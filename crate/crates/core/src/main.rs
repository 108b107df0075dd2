fn main() {
    std::process::exit(dispersion_skew::cli::run_cli(std::env::args_os()));
}
