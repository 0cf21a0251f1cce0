fn main() {
    eprintln!("mogp: CLI not wired up yet");
    std::process::exit(2);
}
