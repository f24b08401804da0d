fn main() {
    rydnoise::cli::main_entry();
}
