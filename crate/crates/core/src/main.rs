fn main() {
    std::process::exit(leafline::cli::run());
}
