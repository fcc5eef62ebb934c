fn main() {
    std::process::exit(lcn::cli::run(std::env::args_os()));
}
