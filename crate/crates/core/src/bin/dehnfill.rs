fn main() {
    std::process::exit(dehnfill::cli::run());
}
