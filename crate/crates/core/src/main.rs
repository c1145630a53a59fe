fn main() {
    std::process::exit(ddm::cli::run(std::env::args_os()));
}
