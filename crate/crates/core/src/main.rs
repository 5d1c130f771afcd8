fn main() {
    std::process::exit(dam_inpaint::cli::run(std::env::args_os()));
}
