fn main() {
    // Die quietly when a downstream pipe closes (e.g. `rinkrate ... | head`)
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(rinkrate::cli::run());
}
