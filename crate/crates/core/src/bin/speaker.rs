fn main() {
    std::process::exit(neural_speaker::cli::run_from(std::env::args_os()));
}
