fn main() {
    std::process::exit(crop_harness::cli::run_cli(std::env::args_os()));
}
