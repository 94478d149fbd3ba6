fn main() {
    std::process::exit(actmax::cli::run(std::env::args_os()));
}
