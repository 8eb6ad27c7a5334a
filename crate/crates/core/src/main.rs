fn main() {
    std::process::exit(fairdgcl::cli::main());
}
