fn main() {
    std::process::exit(frame_sampler::harness::cli::run(std::env::args_os()));
}
