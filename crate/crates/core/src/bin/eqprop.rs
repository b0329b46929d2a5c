fn main() {
    std::process::exit(eqprop::cli::main_with_args(std::env::args_os()));
}
