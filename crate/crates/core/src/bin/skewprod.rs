fn main() {
    std::process::exit(skewprod::cli::run(std::env::args_os()));
}
