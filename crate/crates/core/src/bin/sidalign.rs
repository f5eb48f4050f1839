fn main() {
    std::process::exit(sidalign::cli::dispatch(std::env::args_os()));
}
