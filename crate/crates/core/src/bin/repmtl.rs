fn main() {
    std::process::exit(repmtl::cli::run(std::env::args_os()));
}
