fn main() {
    std::process::exit(pimc_cli::main_with(std::env::args_os()));
}
