fn main() {
    std::process::exit(textchart_core::cli::dispatch(std::env::args()));
}
