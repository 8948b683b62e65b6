fn main() {
    std::process::exit(detant_core::cli::run(std::env::args_os()));
}
