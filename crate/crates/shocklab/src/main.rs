fn main() {
    shocklab::cli::main_entry();
}
