fn main() {
    std::process::exit(pdmp_ldp::cli::main_with(std::env::args_os()));
}
