fn main() {
    std::process::exit(crsam::cli::run(std::env::args()));
}
