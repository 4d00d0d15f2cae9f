fn main() {
    std::process::exit(spikehar::commands::run(std::env::args_os()));
}
