fn main() {
    std::process::exit(ltate::cli::run(std::env::args_os()));
}
