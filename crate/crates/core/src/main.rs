fn main() {
    std::process::exit(bva::cli::main());
}
