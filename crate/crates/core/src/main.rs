fn main() {
    std::process::exit(wtd_fisher::cli::main());
}
