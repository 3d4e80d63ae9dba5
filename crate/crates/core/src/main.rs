fn main() {
    std::process::exit(anatomy_net::cli::run(std::env::args_os()));
}
