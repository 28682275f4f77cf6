// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

fn main() {
    std::process::exit(podseal::cli::main_with_args(std::env::args_os()));
}
