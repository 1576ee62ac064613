fn main() {
    std::process::exit(romrec::main_with(std::env::args_os()));
}
