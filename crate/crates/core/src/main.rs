fn main() {
    std::process::exit(embedkit::cli::dispatch(std::env::args_os()));
}
