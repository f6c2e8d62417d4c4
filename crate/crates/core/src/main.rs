fn main() {
    std::process::exit(spix::cli::run(std::env::args_os()));
}
