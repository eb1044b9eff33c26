fn main() {
    std::process::exit(assembly_cli::run());
}
