fn main() {
    std::process::exit(pcn::cli::run(std::env::args_os()));
}
