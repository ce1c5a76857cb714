fn main() {
    std::process::exit(robust_est::cli::run(std::env::args_os()));
}
