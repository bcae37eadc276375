fn main() {
    std::process::exit(carcopula_cli::main_with_args(std::env::args_os()));
}
