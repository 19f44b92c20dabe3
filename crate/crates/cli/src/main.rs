fn main() {
    println!("memlens");
}
