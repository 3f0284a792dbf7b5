fn main() {
    std::process::exit(pearlkit::cli::main());
}
