//! Write a synthetic perovskite-like dataset as JSONL.
//!
//! Usage: make_toy_data <count> <seed> <out.jsonl>

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() != 4 {
        eprintln!("usage: make_toy_data <count> <seed> <out.jsonl>");
        std::process::exit(2);
    }
    let count: usize = args[1].parse().expect("count");
    let seed: u64 = args[2].parse().expect("seed");
    let data = xtalgen::toydata::perovskite_dataset(count, seed);
    xtalgen::crystal::io::write_jsonl_dataset(&args[3], &data).unwrap();
    eprintln!("wrote {} records to {}", data.len(), args[3]);
}
