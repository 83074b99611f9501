fn main() {
    std::process::exit(scrollnav::cli::run_command());
}
