fn main() {
    std::process::exit(gaelforge::cli::run(std::env::args_os()));
}
