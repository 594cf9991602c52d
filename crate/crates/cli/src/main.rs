// Training allocates and frees multi-megabyte activations every step; an
// allocator that keeps freed pages avoids re-faulting them in from the kernel.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> std::process::ExitCode {
    nac_cli::run(std::env::args_os())
}
