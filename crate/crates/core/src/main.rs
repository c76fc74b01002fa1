fn main() {
    std::process::exit(limv::cli::run_command(std::env::args_os()));
}
