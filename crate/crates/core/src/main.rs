fn main() {
    std::process::exit(ssd_cache::cli::dispatch(std::env::args_os()));
}
