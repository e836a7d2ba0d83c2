fn main() {
    std::process::exit(glmotion::run_cli());
}
