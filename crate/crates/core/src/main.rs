fn main() {
    std::process::exit(pqfl::orchestrator::cli(std::env::args_os()));
}
