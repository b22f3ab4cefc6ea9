fn main() {
    std::process::exit(soupsr::cli::main(std::env::args_os()));
}
