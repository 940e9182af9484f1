fn main() {
    std::process::exit(foamfed::cli::run(std::env::args_os()));
}
