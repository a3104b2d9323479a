use std::panic;

fn main() {
    let code = panic::catch_unwind(|| trifuse_cli::main_with_code(std::env::args_os()))
        .unwrap_or(trifuse_cli::EXIT_INTERNAL);
    std::process::exit(code);
}
