fn main() {
    std::process::exit(didguard::cli::main());
}
