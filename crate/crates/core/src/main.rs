fn main() {
    std::process::exit(gml2::cli::run(std::env::args()));
}
