// SPDX-License-Identifier: MIT OR Apache-2.0

//! `tthjb` command-line entry point.

fn main() {
    std::process::exit(tthjb::cli::run(std::env::args_os()));
}
