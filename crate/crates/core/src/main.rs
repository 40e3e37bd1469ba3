fn main() {
    std::process::exit(procams::cli::run(std::env::args_os()));
}
