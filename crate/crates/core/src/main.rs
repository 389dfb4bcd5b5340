fn main() {
    std::process::exit(wsmatch::harness::cli_main(std::env::args_os()));
}
