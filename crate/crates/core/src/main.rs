fn main() {
    std::process::exit(phylophon::cli::main());
}
