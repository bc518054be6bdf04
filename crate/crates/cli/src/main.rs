use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = scenecast_cli::Cli::parse();
    if let Err(err) = scenecast_cli::run(cli) {
        eprintln!("{}", scenecast_cli::error_json(&err));
        std::process::exit(1);
    }
}
