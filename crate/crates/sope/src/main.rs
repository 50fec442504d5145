fn main() {
    std::process::exit(sope::cli::run(std::env::args_os()));
}
