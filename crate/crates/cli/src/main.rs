fn main() {
    std::process::exit(tfrg::run(std::env::args_os()));
}
