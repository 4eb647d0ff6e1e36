fn main() {
    std::process::exit(picardnet::cli::main());
}
