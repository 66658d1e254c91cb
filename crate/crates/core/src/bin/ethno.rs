fn main() {
    std::process::exit(ethno_core::cli::dispatch(std::env::args_os()));
}
