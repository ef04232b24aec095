fn main() {
    std::process::exit(thicken::cli::main());
}
