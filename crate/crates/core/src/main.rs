fn main() {
    std::process::exit(relex_sef::cli::run());
}
