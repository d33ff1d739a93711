fn main() {
    std::process::exit(taskmask_bench::cli::run(std::env::args_os()));
}
