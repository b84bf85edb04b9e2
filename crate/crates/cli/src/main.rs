use clap::Parser;

fn main() {
    let cli = coco_cli::Cli::parse();
    match coco_cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(coco_cli::EXIT_INPUT);
        }
    }
}
