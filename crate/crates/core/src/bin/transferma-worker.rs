//! Layer worker: reads fit requests on stdin, writes replies on stdout.

fn main() {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    if let Err(e) = transferma_core::pipeline::serve(stdin.lock(), stdout.lock()) {
        eprintln!("transferma-worker: {e}");
        std::process::exit(1);
    }
}
