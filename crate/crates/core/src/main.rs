fn main() {
    std::process::exit(l1ns::cli::run(std::env::args_os()));
}
