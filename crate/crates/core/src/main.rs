fn main() {
    std::process::exit(lpr_core::harness::cli_main(std::env::args_os()));
}
