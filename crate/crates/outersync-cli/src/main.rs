fn main() {
    // die quietly when the read end of a pipe closes (e.g. `outersync ... | head`);
    // Rust ignores SIGPIPE by default, which turns that into a println! panic
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(outersync_cli::run_command(std::env::args_os()));
}
