use std::sync::atomic::{AtomicBool, Ordering};

static STOP: AtomicBool = AtomicBool::new(false);

fn main() {
    if let Err(e) = ctrlc::set_handler(|| {
        if STOP.swap(true, Ordering::SeqCst) {
            // Second interrupt: give up on a clean shutdown.
            std::process::exit(bluesim::cli::EXIT_INTERRUPTED);
        }
    }) {
        eprintln!("warning: cannot install interrupt handler: {e}");
    }
    std::process::exit(bluesim::cli::main_with(std::env::args_os(), &STOP));
}
