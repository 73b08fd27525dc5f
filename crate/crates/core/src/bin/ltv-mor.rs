fn main() {
    std::process::exit(ltv_mor::cli::run());
}
