fn main() {
    std::process::exit(zoomlab::runner::cli(std::env::args_os()));
}
