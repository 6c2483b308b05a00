fn main() {
    std::process::exit(breakline::cli::run_from(std::env::args_os()));
}
