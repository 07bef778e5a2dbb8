fn main() {
    std::process::exit(rrmdp_cli::main_with_args(std::env::args_os()));
}
