fn main() {
    std::process::exit(hrt::cli::run(std::env::args_os()));
}
