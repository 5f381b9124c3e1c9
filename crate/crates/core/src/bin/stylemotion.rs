fn main() {
    std::process::exit(stylemotion::cli::run(std::env::args()));
}
