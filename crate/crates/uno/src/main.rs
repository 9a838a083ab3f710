fn main() {
    println!("uno");
}
