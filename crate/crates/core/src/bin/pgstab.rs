fn main() {
    std::process::exit(pgstab::cli::main());
}
