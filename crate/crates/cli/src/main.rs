fn main() {
    // RUST_LOG=gridsleuth_core=trace replays the learners' repair walk.
    env_logger::Builder::from_env(env_logger::Env::default())
        .format_timestamp(None)
        .init();
    std::process::exit(gridsleuth_cli::run());
}
