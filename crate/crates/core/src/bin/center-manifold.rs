fn main() {
    std::process::exit(center_manifold::cli::main_from_args())
}
