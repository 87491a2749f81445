fn main() {
    std::process::exit(xrf_restore_cli::run());
}
