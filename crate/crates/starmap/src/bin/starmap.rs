fn main() {
    std::process::exit(starmap::cli::run());
}
