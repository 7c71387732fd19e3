fn main() {
    std::process::exit(ctxnmt::cli::run(std::env::args_os()));
}
