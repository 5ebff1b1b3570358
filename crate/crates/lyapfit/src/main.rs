fn main() {
    std::process::exit(lyapfit::cli::run(std::env::args_os()));
}
