fn main() {
    std::process::exit(todlab::cli::main());
}
