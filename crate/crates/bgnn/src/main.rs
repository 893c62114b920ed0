fn main() {
    std::process::exit(cml_bgnn::cli::run(std::env::args_os()));
}
