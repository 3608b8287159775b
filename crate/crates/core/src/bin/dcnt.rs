fn main() {
    std::process::exit(dcnt::cli::dispatch(std::env::args_os()));
}
