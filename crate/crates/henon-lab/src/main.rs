fn main() {
    std::process::exit(henon_lab::cli::run(std::env::args_os()));
}
