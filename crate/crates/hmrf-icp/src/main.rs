fn main() {
    std::process::exit(hmrf_icp::cli::run());
}
