fn main() {
    std::process::exit(rgnet::cli::run(std::env::args_os()));
}
