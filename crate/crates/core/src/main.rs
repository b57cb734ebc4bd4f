use std::process::ExitCode;

use dpads::cli::bench::PeakAlloc;

#[global_allocator]
static ALLOC: PeakAlloc = PeakAlloc;

fn main() -> ExitCode {
    dpads::cli::main_with_args(std::env::args_os())
}
