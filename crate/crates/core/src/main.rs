fn main() {
    std::process::exit(tbir::harness::cli::run(std::env::args_os()));
}
