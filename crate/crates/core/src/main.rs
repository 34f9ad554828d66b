fn main() {
    std::process::exit(fourier_sdr::cli::run(std::env::args_os()));
}
