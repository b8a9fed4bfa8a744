fn main() {
    std::process::exit(oadino::cli::run(std::env::args_os()));
}
