fn main() {
    std::process::exit(ensembits::cli::run(std::env::args_os()));
}
