fn main() {
    std::process::exit(microreg_cli::main_with_args(std::env::args()));
}
