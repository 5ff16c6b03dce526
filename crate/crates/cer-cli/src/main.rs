fn main() {
    std::process::exit(cer_cli::cli::run());
}
