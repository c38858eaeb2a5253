fn main() {
    std::process::exit(kohdesign_service::cli::run(std::env::args_os()));
}
