fn main() {
    std::process::exit(bevlane_cli::run(std::env::args_os()));
}
