fn main() {
    std::process::exit(seg_harness::cli::main_with(std::env::args_os()));
}
